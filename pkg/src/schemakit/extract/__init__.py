"""Schema extractors: grammar induction from demonstration corpora."""

from .corpus import Episode, demo_pairs_from_lines, parse_demo_line
from .chmm import ClonedHMM, decode_episodes
from .cscg import CscgSchemaExtractor, align, discover, interpret, learn_precedence
from .export import SurfaceRule, Lit, Var, export_grammar
from .miner import EnumerativeRuleMiner

__all__ = [
    "ClonedHMM",
    "CscgSchemaExtractor",
    "EnumerativeRuleMiner",
    "Episode",
    "Lit",
    "SurfaceRule",
    "Var",
    "align",
    "decode_episodes",
    "demo_pairs_from_lines",
    "discover",
    "export_grammar",
    "interpret",
    "learn_precedence",
    "parse_demo_line",
]
