"""Iterative refinement: detect marks, collapse instances, bind, unwind.

One inference run alternates a decomposer step (oracle or neural) with a
collapse pass that replaces every marked schema instance by a fresh
placeholder primitive, recording the instance's evaluator expansion in the
binding store. When no modifiers remain (or the step reaches a fixed point)
the final sequence is unwound: placeholders expand recursively, ordinary
primitives evaluate, output tokens pass through.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .codec import encode_library, encode_sample
from .errors import (
    MalformedMarking,
    MissingPrimEval,
    PlaceholderExhausted,
    SchemakitError,
    UnknownPlaceholder,
)
from .grammar import (
    ArgRef,
    Grammar,
    Literal,
    Slot,
    oracle_decompose_step,
    parse_tree,
    pattern_literal_prims,
)
from .tokens import EOS, Token, TokenKind, VocabConfig, prim


class BindingStore:
    """Ordered placeholder -> expansion map over a pool of unused primitives.

    Expansions may reference earlier placeholders only (a DAG by
    construction); each placeholder is allocated exactly once.
    """

    def __init__(self, pool: list[Token]):
        self._pool = list(pool)
        self._cursor = 0
        self.entries: dict[Token, tuple[Token, ...]] = {}

    def allocate(self, expansion: tuple[Token, ...]) -> Token:
        if self._cursor >= len(self._pool):
            raise PlaceholderExhausted(
                f"all {len(self._pool)} placeholder primitives in use"
            )
        p = self._pool[self._cursor]
        self._cursor += 1
        self.entries[p] = expansion
        return p

    def __contains__(self, token: Token) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def placeholder_pool(g: Grammar, x: list[Token], n_primitives: int) -> list[Token]:
    """Primitives usable as placeholders: not pattern literals, not in x."""
    blocked = {t.index for t in pattern_literal_prims(g)}
    blocked |= {t.index for t in x if t.kind is TokenKind.PRIMITIVE}
    return [prim(i) for i in range(n_primitives) if i not in blocked]


def collapse_pass(g: Grammar, y: list[Token], store: BindingStore) -> list[Token]:
    """Replace every marked instance with a placeholder, left to right.

    The span around a schema-name token must reproduce the schema's pattern
    (atoms at slots, exact tokens at literals); anything else is a
    MalformedMarking.
    """
    by_name = {s.name_index: s for s in g.schemas}
    items = list(y)
    while True:
        pos = next(
            (i for i, t in enumerate(items) if t.kind is TokenKind.SCHEMA), None
        )
        if pos is None:
            return items
        schema = by_name.get(items[pos].index)
        if schema is None:
            raise MalformedMarking(f"unknown schema token {items[pos]!r}")
        start = pos - schema.trigger_pos
        end = start + len(schema.pattern)
        if start < 0 or end > len(items):
            raise MalformedMarking(
                f"instance of schema {schema.name_index} runs off the sequence"
            )
        args: list[Token] = []
        for off, el in enumerate(schema.pattern):
            item = items[start + off]
            if isinstance(el, Slot):
                if item.kind is not TokenKind.PRIMITIVE:
                    raise MalformedMarking(
                        f"slot of schema {schema.name_index} bound to non-atom {item!r}"
                    )
                args.append(item)
            elif off == schema.trigger_pos:
                continue  # the mark itself
            elif item != el.token:
                raise MalformedMarking(
                    f"literal mismatch in schema {schema.name_index}: "
                    f"expected {el.token!r}, found {item!r}"
                )
        expansion: list[Token] = []
        for it in schema.eval_template:
            if isinstance(it, ArgRef):
                expansion.append(args[it.arg_index])
            else:
                expansion.append(it.token)
        p = store.allocate(tuple(expansion))
        items[start:end] = [p]


def unwind(final: list[Token], store: BindingStore, g: Grammar) -> list[Token]:
    """Expand placeholders recursively, evaluate primitives, keep outputs."""
    memo: dict[Token, list[Token]] = {}

    def expand(token: Token) -> list[Token]:
        if token.kind is TokenKind.OUTPUT:
            return [token]
        if token.kind is not TokenKind.PRIMITIVE:
            raise UnknownPlaceholder(f"cannot unwind token {token!r}")
        if token in store.entries:
            if token not in memo:
                memo[token] = [
                    out for t in store.entries[token] for out in expand(t)
                ]
            return memo[token]
        if token in g.prim_eval:
            return list(g.prim_eval[token])
        raise UnknownPlaceholder(f"{token!r} has no binding and no evaluation")

    return [out for t in final for out in expand(t)]


@dataclass
class OracleBackend:
    """Single-step decomposition computed symbolically from the grammar."""

    grammar: Grammar

    def step(self, x: list[Token]) -> list[Token]:
        return oracle_decompose_step(self.grammar, x)


@dataclass
class ModelBackend:
    """Single-step decomposition predicted by a trained decomposer."""

    model: object  # SingleStepDecomposer (estimator with decode_step)
    grammar: Grammar
    include_priorities: bool | None = None

    def step(self, x: list[Token]) -> list[Token]:
        return self.model.decode_step(
            self.grammar, x, include_priorities=self.include_priorities
        )


@dataclass
class InferenceResult:
    output: list[Token] | None
    final: list[Token]
    store: BindingStore
    trace: list[list[Token]]
    iterations: int
    failure: str | None = None  # MalformedDecomposition | IterationCapExceeded

    @property
    def ok(self) -> bool:
        return self.failure is None and self.output is not None


def run_inference(
    backend, g: Grammar, x: list[Token], max_iterations: int = 32,
    n_primitives: int | None = None,
) -> InferenceResult:
    """Iterate backend steps and collapse passes until resolution.

    Decomposer misbehavior (unparseable marks, stray edits, decode failures)
    is classified as MalformedDecomposition; running past the iteration cap
    as IterationCapExceeded. Both are failures of the prediction, not errors.
    """
    if n_primitives is None:
        n_primitives = g.bounds.n_primitives
    store = BindingStore(placeholder_pool(g, x, n_primitives))
    trace: list[list[Token]] = [list(x)]
    failure = None
    iterations = 0
    for _ in range(max_iterations):
        iterations += 1
        try:
            y = backend.step(x)
        except SchemakitError as exc:
            failure = f"MalformedDecomposition: step failed: {exc}"
            break
        trace.append(list(y))
        if y == x:
            break  # fixed point: nothing left to decompose
        if all(t.kind is not TokenKind.SCHEMA for t in y):
            failure = "MalformedDecomposition: step changed tokens without marking"
            break
        try:
            x = collapse_pass(g, y, store)
        except (MalformedMarking, PlaceholderExhausted) as exc:
            failure = f"MalformedDecomposition: {exc}"
            break
        trace.append(list(x))
        if all(t.kind is not TokenKind.MODIFIER for t in x):
            break  # fully collapsed
    else:
        failure = "IterationCapExceeded"

    output = None
    if failure is None:
        try:
            output = unwind(x, store, g)
        except (UnknownPlaceholder, MissingPrimEval) as exc:
            failure = f"MalformedDecomposition: unwind failed: {exc}"
    return InferenceResult(output, x, store, trace, iterations, failure)


@dataclass
class StepBoundReport:
    sequence_length: int
    iterations: int
    parse_depth: int

    @property
    def within_bound(self) -> bool:
        return self.iterations <= self.parse_depth + 1


def step_bound_check(result: InferenceResult, g: Grammar, x: list[Token]) -> StepBoundReport:
    """Iterations must not exceed composition depth + 1 (root at depth 0)."""
    depth = parse_tree(g, x).depth()
    return StepBoundReport(len(x), result.iterations, depth)


def trace_lines(result: InferenceResult) -> list[str]:
    lines = []
    for d, seq in enumerate(result.trace):
        lines.append(f"STEP {d}: " + " ".join(t.spell() for t in seq))
    for p, expansion in result.store.entries.items():
        lines.append(f"BIND {p.spell()} := " + " ".join(t.spell() for t in expansion))
    if result.failure:
        lines.append(f"FAIL {result.failure}")
    return lines


class SchemaEngine:
    """predict() facade: commands in, flat output sequences out."""

    def __init__(self, grammar: Grammar, backend, anon_map=None, max_iterations: int = 32):
        self.grammar = grammar
        self.backend = backend
        self.anon_map = anon_map
        self.max_iterations = max_iterations

    def run(self, tokens: list[Token]) -> InferenceResult:
        return run_inference(
            self.backend, self.grammar, tokens, max_iterations=self.max_iterations
        )

    def predict(self, X: list[list[str]]) -> list[list[str] | None]:
        if self.anon_map is None:
            raise SchemakitError("predict over words needs an anonymization map")
        out = []
        for words in X:
            try:
                tokens = self.anon_map.encode_command(list(words))
            except SchemakitError:
                out.append(None)
                continue
            result = self.run(tokens)
            out.append(
                self.anon_map.decode_output(result.output) if result.ok else None
            )
        return out
