"""schemakit: prioritized rewrite schemas with a meta-trained decomposer.

The package splits into a symbolic layer (grammars, matching, parsing,
evaluation), a neural layer (a small decoder-only transformer meta-trained to
do one decomposition step given the grammar in context), an iterative
inference engine that alternates model steps with schema collapses, and two
schema extractors that induce grammars from demonstration corpora.
"""

from .grammar import (
    ArgRef,
    Emit,
    Grammar,
    GrammarBounds,
    Literal,
    Schema,
    Slot,
    evaluate,
    match_instances,
    oracle_decompose_step,
    parse_tree,
    validate_grammar,
)
from .tokens import Token, TokenKind, VocabConfig

__version__ = "0.1.0"

__all__ = [
    "ArgRef",
    "Emit",
    "Grammar",
    "GrammarBounds",
    "Literal",
    "Schema",
    "Slot",
    "Token",
    "TokenKind",
    "VocabConfig",
    "evaluate",
    "match_instances",
    "oracle_decompose_step",
    "parse_tree",
    "validate_grammar",
    "__version__",
]
