"""Demonstration corpus format: one line per demonstration,

    IN: <words> <SEP> <words> <EOS>

with literal <SEP>/<EOS> tags. Episodes carry the decoded latent trace when a
sequence model produced one (diagnostics only; alignment runs over tokens).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ParseError


@dataclass(frozen=True)
class Episode:
    x: tuple[str, ...]
    y: tuple[str, ...]
    z: tuple[int, ...] = ()

    def stream(self) -> list[str]:
        return ["IN:", *self.x, "<SEP>", *self.y, "<EOS>"]


def parse_demo_line(line: str, lineno: int = 0) -> tuple[list[str], list[str]]:
    words = line.split()
    if not words or words[0] != "IN:" or words[-1] != "<EOS>" or "<SEP>" not in words:
        raise ParseError(f"demo line {lineno}: expected 'IN: ... <SEP> ... <EOS>'")
    sep = words.index("<SEP>")
    x = words[1:sep]
    y = words[sep + 1 : -1]
    if not x or not y:
        raise ParseError(f"demo line {lineno}: empty input or output side")
    return x, y


def demo_pairs_from_lines(text: str) -> list[tuple[list[str], list[str]]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            pairs.append(parse_demo_line(line, lineno))
    return pairs
