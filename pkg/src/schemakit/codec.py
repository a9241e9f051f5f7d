"""Bit-exact encoding of grammars and training samples, plus anonymization.

A schema library is rendered one schema per definition, in descending
priority order::

    SC_DEF SC_i SC_PRI PRIORITY_rank <pattern> SC_SEP ...

Pattern slots become argument markers: the j-th slot before the modifier is
ARG_j, the j-th slot after it is ARG_{A_max+1+j} regardless of how many come
before. Priorities are rendered as dense per-grammar ranks (rank 0 resolves
earliest). A full sample is ``library LP_SEP input SEP target EOS``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BoundsExceeded, ContextOverflow, VocabOverflow
from .grammar import Grammar, Literal, Slot, validate_grammar
from .tokens import (
    EOS,
    LP_SEP,
    SC_DEF,
    SC_PRI,
    SC_SEP,
    SEP,
    Token,
    TokenKind,
    VocabConfig,
    arg,
    mod,
    out,
    prim,
    priority_token,
    schema_name,
)


def priority_ranks(g: Grammar) -> dict[int, int]:
    """Dense rank per schema name_index; rank 0 = largest priority."""
    distinct = sorted({s.priority for s in g.schemas}, reverse=True)
    rank_of = {p: r for r, p in enumerate(distinct)}
    return {s.name_index: rank_of[s.priority] for s in g.schemas}


def encode_library(g: Grammar, cfg: VocabConfig, include_priorities: bool = True) -> list[Token]:
    if (
        len(g.schemas) > cfg.n_schemas
        or any(s.args_before > cfg.max_args_side or s.args_after > cfg.max_args_side for s in g.schemas)
        or any(m.index >= cfg.n_modifiers for s in g.schemas for m in s.modifiers())
        or any(p.index >= cfg.n_primitives for p in g.primitives_used())
    ):
        raise BoundsExceeded("grammar exceeds vocabulary bounds")
    ranks = priority_ranks(g)
    tokens: list[Token] = []
    for s in sorted(g.schemas, key=lambda s: (-s.priority, s.name_index)):
        tokens += [SC_DEF, schema_name(s.name_index)]
        if include_priorities:
            tokens += [SC_PRI, priority_token(ranks[s.name_index])]
        before_seen = 0
        after_seen = 0
        past_trigger = False
        for i, el in enumerate(s.pattern):
            if isinstance(el, Slot):
                if past_trigger:
                    tokens.append(arg(cfg.max_args_side + 1 + after_seen))
                    after_seen += 1
                else:
                    tokens.append(arg(before_seen))
                    before_seen += 1
            else:
                tokens.append(el.token)
                if i == s.trigger_pos:
                    past_trigger = True
        tokens.append(SC_SEP)
    return tokens


def encode_sample(
    lib: list[Token],
    input_tokens: list[Token],
    target_tokens: list[Token] | None = None,
    max_len: int | None = None,
) -> list[Token]:
    toks = list(lib) + [LP_SEP] + list(input_tokens) + [SEP]
    if target_tokens is not None:
        toks += list(target_tokens) + [EOS]
    if max_len is not None and len(toks) > max_len:
        raise ContextOverflow(f"sample length {len(toks)} > context {max_len}")
    return toks


@dataclass
class AnonymizationMap:
    """Bidirectional surface <-> token maps for primitives, modifiers, outputs.

    Modifier surfaces may span several words ("opposite left" is one token);
    encode_command matches the longest modifier surface first.
    """

    prim_by_surface: dict[str, Token] = field(default_factory=dict)
    mod_by_surface: dict[str, Token] = field(default_factory=dict)
    out_by_surface: dict[str, Token] = field(default_factory=dict)

    def __post_init__(self):
        self._check_injective()

    def _check_injective(self):
        for name, table in (
            ("primitive", self.prim_by_surface),
            ("modifier", self.mod_by_surface),
            ("output", self.out_by_surface),
        ):
            if len(set(table.values())) != len(table):
                raise VocabOverflow(f"non-injective {name} map")

    @property
    def surface_by_token(self) -> dict[Token, str]:
        inv = {}
        for table in (self.prim_by_surface, self.mod_by_surface, self.out_by_surface):
            inv.update({t: s for s, t in table.items()})
        return inv

    def encode_command(self, words: list[str]) -> list[Token]:
        """Greedy longest-modifier-first word-to-token translation."""
        max_span = max((len(s.split()) for s in self.mod_by_surface), default=1)
        toks: list[Token] = []
        i = 0
        while i < len(words):
            for span in range(max_span, 0, -1):
                surf = " ".join(words[i : i + span])
                if surf in self.mod_by_surface:
                    toks.append(self.mod_by_surface[surf])
                    i += span
                    break
            else:
                word = words[i]
                if word not in self.prim_by_surface:
                    raise VocabOverflow(f"unknown command word {word!r}")
                toks.append(self.prim_by_surface[word])
                i += 1
        return toks

    def decode_output(self, tokens) -> list[str]:
        inv = {t: s for s, t in self.out_by_surface.items()}
        return [inv[t] for t in tokens]

    def decode_any(self, tokens) -> list[str]:
        inv = self.surface_by_token
        return [inv.get(t, t.spell()) for t in tokens]


def anonymize(
    corpus: list[tuple[list[str], list[str]]],
    modifier_surfaces: list[str],
    cfg: VocabConfig | None = None,
) -> tuple[AnonymizationMap, list[tuple[list[Token], list[Token]]]]:
    """Assign ids in first-occurrence order over (command, action) pairs.

    modifier_surfaces lists every modifier, single- or multi-word; remaining
    command words become primitives and action words become outputs.
    """
    cfg = cfg or VocabConfig()
    amap = AnonymizationMap()
    mod_set = set(modifier_surfaces)
    max_span = max((len(s.split()) for s in mod_set), default=1)

    def see_command(words: list[str]):
        i = 0
        while i < len(words):
            for span in range(max_span, 0, -1):
                surf = " ".join(words[i : i + span])
                if surf in mod_set:
                    if surf not in amap.mod_by_surface:
                        if len(amap.mod_by_surface) >= cfg.n_modifiers:
                            raise VocabOverflow(
                                f"more than {cfg.n_modifiers} distinct modifiers"
                            )
                        amap.mod_by_surface[surf] = mod(len(amap.mod_by_surface))
                    i += span
                    break
            else:
                w = words[i]
                if w not in amap.prim_by_surface:
                    if len(amap.prim_by_surface) >= cfg.n_primitives:
                        raise VocabOverflow(
                            f"more than {cfg.n_primitives} distinct primitives"
                        )
                    amap.prim_by_surface[w] = prim(len(amap.prim_by_surface))
                i += 1

    for cmd, actions in corpus:
        see_command(cmd)
        for w in actions:
            if w not in amap.out_by_surface:
                amap.out_by_surface[w] = out(len(amap.out_by_surface))

    pairs = [
        (amap.encode_command(cmd), [amap.out_by_surface[w] for w in actions])
        for cmd, actions in corpus
    ]
    return amap, pairs


# --- anonymization map file format ------------------------------------------
#   PRIM walk -> PRIM_0
#   MOD opposite left -> MOD_2
#   OUT WALK -> OUT_0


def dump_anonymization(amap: AnonymizationMap) -> str:
    lines = []
    for kind, table in (
        ("PRIM", amap.prim_by_surface),
        ("MOD", amap.mod_by_surface),
        ("OUT", amap.out_by_surface),
    ):
        for surface, token in sorted(table.items(), key=lambda kv: kv[1].index):
            lines.append(f"{kind} {surface} -> {token.spell()}")
    return "\n".join(lines) + "\n"


def load_anonymization(text: str) -> AnonymizationMap:
    from .tokens import parse_token

    amap = AnonymizationMap()
    tables = {
        "PRIM": amap.prim_by_surface,
        "MOD": amap.mod_by_surface,
        "OUT": amap.out_by_surface,
    }
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, rest = line.split(" ", 1)
        surface, _, spelling = rest.rpartition(" -> ")
        tables[kind][surface] = parse_token(spelling)
    amap._check_injective()
    return amap
