"""Endless meta-training stream over randomly generated grammars.

New random grammars enter a buffer at a fixed step interval; each sample draws
a grammar from the buffer with probability proportional to 1/(use_count + s),
generates a composition sequence (2-deep by default), and pairs it with its
single-step decomposition. Compound schemas (a literal primitive fused into
the pattern, sharing a modifier with the atomic schema at higher priority) are
generated with probability p_compound so that zero-shot grammars may use them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .codec import encode_library, encode_sample
from .errors import ContextOverflow, EmptyBuffer, GenerationError, NoEligibleSub
from .grammar import (
    ArgRef,
    Emit,
    Grammar,
    GrammarBounds,
    Literal,
    Schema,
    Slot,
    marked_surface,
    pattern_literal_prims,
    surface,
    validate_grammar,
)
from .grammar import Apply, CompositionTree, Leaf, Node
from .tokens import Token, VocabConfig, mod, out, prim

TWO_DEEP = "two_deep"


@dataclass(frozen=True)
class GenConfig:
    vocab: VocabConfig = field(default_factory=VocabConfig)
    max_eval_len: int = 6
    depth_mode: str | int = TWO_DEEP  # TWO_DEEP or an int max depth
    seed: int = 0
    new_grammar_interval: int = 100
    smoothing: float = 1.0
    batch_size: int = 64
    context_len: int = 256
    include_priorities: bool = True
    p_sub: float = 0.5  # chance an argument expands into a sub-schema
    p_compound: float = 0.35  # chance a modifier also gets a compound variant
    retry_budget: int = 50

    def __post_init__(self):
        if not 0 < self.smoothing <= 1:
            raise ValueError("smoothing must be in (0, 1]")
        if self.new_grammar_interval < 1:
            raise ValueError("new_grammar_interval must be >= 1")

    @property
    def max_depth(self) -> int:
        return 1 if self.depth_mode == TWO_DEEP else int(self.depth_mode)


def random_grammar(cfg: GenConfig, rng: np.random.Generator) -> Grammar:
    """Draw a validator-clean grammar under the vocabulary bounds."""
    v = cfg.vocab
    n_mods = int(rng.integers(1, v.n_modifiers + 1))
    mod_ids = rng.choice(v.n_modifiers, size=n_mods, replace=False)

    compound_for = [m for m in mod_ids if rng.random() < cfg.p_compound]
    n_total = n_mods + len(compound_for)
    while n_total > v.n_schemas:
        compound_for.pop()
        n_total -= 1

    name_ids = list(rng.permutation(v.n_schemas)[:n_total])
    priorities = list(rng.permutation(n_total))
    # Compounds reuse a small per-grammar pool of literal primitives (SCAN's
    # "turn" plays this role for all six of its compounds).
    literal_pool = list(rng.choice(v.n_primitives, size=min(2, v.n_primitives), replace=False))

    def rand_template(arity: int) -> tuple:
        items = []
        for _ in range(int(rng.integers(0, cfg.max_eval_len + 1))):
            if arity > 0 and rng.random() < 0.5:
                items.append(ArgRef(int(rng.integers(0, arity))))
            else:
                items.append(Emit(out(int(rng.integers(0, v.n_primitives)))))
        return tuple(items)

    schemas: list[Schema] = []
    cursor = 0
    for m in mod_ids:
        q = int(rng.integers(0, v.max_args_side + 1))
        r = int(rng.integers(0, v.max_args_side + 1))
        pattern = tuple([Slot()] * q + [Literal(mod(int(m)))] + [Slot()] * r)
        atomic = Schema(int(name_ids[cursor]), pattern, int(priorities[cursor]), rand_template(q + r))
        cursor += 1
        schemas.append(atomic)
        if m in compound_for:
            q2 = int(rng.integers(0, v.max_args_side + 1))
            r2 = int(rng.integers(0, v.max_args_side + 1))
            lit = prim(int(rng.choice(literal_pool)))
            pattern2 = tuple([Slot()] * q2 + [Literal(lit), Literal(mod(int(m)))] + [Slot()] * r2)
            pri2 = int(priorities[cursor])
            # Specificity: the compound must out-prioritize its atomic sibling,
            # otherwise it is shadowed at parse time and can never occur.
            if pri2 < atomic.priority:
                schemas[-1] = replace(atomic, priority=pri2)
                pri2 = atomic.priority
            schemas.append(Schema(int(name_ids[cursor]), pattern2, pri2, rand_template(q2 + r2)))
            cursor += 1

    prim_eval = {prim(i): (out(i),) for i in range(v.n_primitives)}
    bounds = GrammarBounds(v.n_primitives, v.n_modifiers, v.max_args_side, v.n_schemas)
    return Grammar(schemas, prim_eval, bounds)


def _random_tree(
    g: Grammar,
    cfg: GenConfig,
    rng: np.random.Generator,
    schema_pos: int,
    depth_left: int,
    fill_prims: list[int],
) -> Node:
    schema = g.schemas[schema_pos]
    eligible = [i for i, s in enumerate(g.schemas) if s.priority > schema.priority]
    children = []
    for _ in range(schema.arity):
        if depth_left > 0 and eligible and rng.random() < cfg.p_sub:
            sub = int(rng.choice(eligible))
            children.append(_random_tree(g, cfg, rng, sub, depth_left - 1, fill_prims))
        else:
            children.append(Leaf(prim(int(rng.choice(fill_prims)))))
    return Apply(schema_pos, tuple(children))


def gen_pair(
    g: Grammar, cfg: GenConfig, rng: np.random.Generator
) -> tuple[list[Token], list[Token]]:
    """One (input, single-step target) pair, exact by construction.

    Slot fills avoid primitives used as compound pattern literals, which
    (together with distinct priorities and ascending priority along tree
    edges) makes the surface parse back to the generated tree; the target is
    then the marked frontier of that tree.
    """
    if not g.schemas:
        raise GenerationError("grammar has no schemas")
    blocked = {t.index for t in pattern_literal_prims(g)}
    fill_prims = [i for i in range(cfg.vocab.n_primitives) if i not in blocked]
    if not fill_prims:
        raise NoEligibleSub("every primitive is a compound literal; nothing can fill slots")
    root = int(rng.integers(0, len(g.schemas)))
    tree = CompositionTree(_random_tree(g, cfg, rng, root, cfg.max_depth, fill_prims))
    return surface(g, tree), marked_surface(g, tree)


@dataclass
class GrammarBuffer:
    entries: list[list] = field(default_factory=list)  # [grammar, use_count]

    def add(self, g: Grammar) -> None:
        self.entries.append([g, 0])

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> list[int]:
        return [c for _, c in self.entries]


def buffer_sample(buf: GrammarBuffer, s: float, rng: np.random.Generator) -> Grammar:
    """Inverse-count sampling: p(i) = (1/(C_i+s)) / sum_j (1/(C_j+s))."""
    if not buf.entries:
        raise EmptyBuffer("grammar buffer is empty")
    weights = np.array([1.0 / (c + s) for _, c in buf.entries])
    probs = weights / weights.sum()
    i = int(rng.choice(len(buf.entries), p=probs))
    buf.entries[i][1] += 1
    return buf.entries[i][0]


@dataclass
class Sample:
    grammar: Grammar
    input: list[Token]
    target: list[Token]
    tokens: list[Token]  # full library+input+target encoding


def stream(cfg: GenConfig) -> Iterator[list[Sample]]:
    """Endless batch iterator; deterministic under cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    buf = GrammarBuffer()
    buf.add(random_grammar(cfg, rng))
    lib_cache: dict[int, list[Token]] = {}
    step = 0
    overflow_count = 0
    while True:
        step += 1
        if step % cfg.new_grammar_interval == 0:
            buf.add(random_grammar(cfg, rng))
            # caches keyed by buffer position stay valid: entries only append
        batch: list[Sample] = []
        stale = 0
        while len(batch) < cfg.batch_size:
            g = buffer_sample(buf, cfg.smoothing, rng)
            key = id(g)
            if key not in lib_cache:
                lib_cache[key] = encode_library(g, cfg.vocab, cfg.include_priorities)
            inp, tgt = gen_pair(g, cfg, rng)
            try:
                toks = encode_sample(lib_cache[key], inp, tgt, cfg.context_len)
            except ContextOverflow:
                overflow_count += 1
                stale += 1
                if stale > 1000:
                    raise ContextOverflow(
                        "1000 consecutive samples overflow the context; "
                        "context_len is too small for this vocabulary"
                    )
                continue
            stale = 0
            batch.append(Sample(g, inp, tgt, toks))
        yield batch


def bucketed_stream(cfg: GenConfig, group: int = 4) -> Iterator[list[Sample]]:
    """stream() regrouped so each batch holds similar-length samples.

    Attention cost is quadratic in the padded length, so sorting a pool of
    `group` batches by length before chunking saves a third of the compute
    without changing the sample distribution. Deterministic under cfg.seed.
    """
    it = stream(cfg)
    if group <= 1:
        yield from it
        return
    while True:
        pool = [s for _ in range(group) for s in next(it)]
        pool.sort(key=lambda s: len(s.tokens))
        for j in range(group):
            yield pool[j * cfg.batch_size : (j + 1) * cfg.batch_size]
