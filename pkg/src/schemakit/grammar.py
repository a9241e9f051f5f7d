"""Prioritized rewrite schemas: grammars, matching, parsing, evaluation.

A grammar is a set of schemas with integer priorities plus per-primitive
evaluations. A schema is a surface pattern over slots and literal tokens,
triggered by a modifier literal; larger priority resolves earlier (deeper in
the composition). Everything here is a pure function over immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import MissingPrimEval, ParseError, SchemakitError
from .tokens import Token, TokenKind, out, parse_token, prim, schema_name


@dataclass(frozen=True, slots=True)
class Slot:
    def __repr__(self) -> str:
        return "_"


@dataclass(frozen=True, slots=True)
class Literal:
    token: Token

    def __repr__(self) -> str:
        return repr(self.token)


PatternElement = Union[Slot, Literal]


@dataclass(frozen=True, slots=True)
class ArgRef:
    arg_index: int

    def __repr__(self) -> str:
        return f"${self.arg_index}"


@dataclass(frozen=True, slots=True)
class Emit:
    token: Token

    def __repr__(self) -> str:
        return repr(self.token)


EvalItem = Union[ArgRef, Emit]


@dataclass(frozen=True)
class Schema:
    name_index: int
    pattern: tuple[PatternElement, ...]
    priority: int
    eval_template: tuple[EvalItem, ...] = ()

    @property
    def arity(self) -> int:
        return sum(1 for el in self.pattern if isinstance(el, Slot))

    @property
    def trigger_pos(self) -> int:
        """Index of the first modifier literal in the pattern."""
        for i, el in enumerate(self.pattern):
            if isinstance(el, Literal) and el.token.kind is TokenKind.MODIFIER:
                return i
        raise SchemakitError(f"schema {self.name_index} has no modifier literal")

    @property
    def trigger(self) -> Token:
        return self.pattern[self.trigger_pos].token  # type: ignore[union-attr]

    @property
    def args_before(self) -> int:
        t = self.trigger_pos
        return sum(1 for el in self.pattern[:t] if isinstance(el, Slot))

    @property
    def args_after(self) -> int:
        return self.arity - self.args_before

    def modifiers(self) -> set[Token]:
        return {
            el.token
            for el in self.pattern
            if isinstance(el, Literal) and el.token.kind is TokenKind.MODIFIER
        }


@dataclass(frozen=True)
class GrammarBounds:
    """The (P, M, A_max, S) quadruple a grammar must fit inside."""

    n_primitives: int = 16
    n_modifiers: int = 12
    max_args_side: int = 2
    n_schemas: int = 20


@dataclass
class Grammar:
    schemas: list[Schema]
    prim_eval: dict[Token, tuple[Token, ...]] = field(default_factory=dict)
    bounds: GrammarBounds = field(default_factory=GrammarBounds)

    def schema_by_name(self, name_index: int) -> Schema | None:
        for s in self.schemas:
            if s.name_index == name_index:
                return s
        return None

    def primitives_used(self) -> set[Token]:
        used = set(self.prim_eval)
        for s in self.schemas:
            for el in s.pattern:
                if isinstance(el, Literal) and el.token.kind is TokenKind.PRIMITIVE:
                    used.add(el.token)
        return used


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "valid grammar" if self.ok else "\n".join(self.violations)


def validate_grammar(g: Grammar) -> ValidationReport:
    """Check every well-formedness invariant; empty report <=> valid."""
    rep = ValidationReport()
    b = g.bounds
    seen_names: set[int] = set()

    if len(g.schemas) > b.n_schemas:
        rep.violations.append(
            f"too many schemas: {len(g.schemas)} > {b.n_schemas}"
        )

    triggers: set[Token] = set()
    referenced_mods: set[Token] = set()
    for s in g.schemas:
        label = f"schema {s.name_index}"
        if not 0 <= s.name_index < b.n_schemas:
            rep.violations.append(f"{label}: name index outside [0, {b.n_schemas})")
        if s.name_index in seen_names:
            rep.violations.append(f"{label}: duplicate name index")
        seen_names.add(s.name_index)
        if s.priority < 0:
            rep.violations.append(f"{label}: negative priority")
        mods = s.modifiers()
        if not mods:
            rep.violations.append(f"{label}: pattern has no modifier literal")
            continue
        triggers.add(s.trigger)
        referenced_mods |= mods
        if s.args_before > b.max_args_side:
            rep.violations.append(
                f"{label}: {s.args_before} args before modifier > {b.max_args_side}"
            )
        if s.args_after > b.max_args_side:
            rep.violations.append(
                f"{label}: {s.args_after} args after modifier > {b.max_args_side}"
            )
        for item in s.eval_template:
            if isinstance(item, ArgRef) and not 0 <= item.arg_index < s.arity:
                rep.violations.append(
                    f"{label}: eval template references arg {item.arg_index}, arity {s.arity}"
                )
            if isinstance(item, Emit) and item.token.kind is not TokenKind.OUTPUT:
                rep.violations.append(f"{label}: eval template emits non-output token")
        for el in s.pattern:
            if isinstance(el, Literal) and el.token.kind not in (
                TokenKind.PRIMITIVE,
                TokenKind.MODIFIER,
            ):
                rep.violations.append(f"{label}: pattern literal must be primitive or modifier")

    for m in sorted(referenced_mods, key=lambda t: t.index):
        if m not in triggers:
            rep.violations.append(f"modifier {m!r} without atomic schema (never a trigger)")
        if m.index >= b.n_modifiers:
            rep.violations.append(f"modifier {m!r} outside [0, {b.n_modifiers})")

    # Determinism: schemas sharing any modifier token must not share a priority.
    for i, a in enumerate(g.schemas):
        for c in g.schemas[i + 1 :]:
            if a.priority == c.priority and a.modifiers() & c.modifiers():
                rep.violations.append(
                    f"ambiguous priority {a.priority} between schemas "
                    f"{a.name_index} and {c.name_index} sharing a modifier"
                )

    prims = g.primitives_used()
    if len(prims) > b.n_primitives:
        rep.violations.append(f"too many primitives: {len(prims)} > {b.n_primitives}")
    for p, val in g.prim_eval.items():
        if p.kind is not TokenKind.PRIMITIVE:
            rep.violations.append(f"prim_eval key {p!r} is not a primitive")
        if any(t.kind is not TokenKind.OUTPUT for t in val):
            rep.violations.append(f"prim_eval value for {p!r} contains non-output tokens")
    for p in prims:
        if p.index >= b.n_primitives:
            rep.violations.append(f"primitive {p!r} outside [0, {b.n_primitives})")

    return rep


# --- composition trees ------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    token: Token


@dataclass(frozen=True)
class Apply:
    schema_index: int  # positional index into grammar.schemas
    children: tuple["Node", ...]


Node = Union[Leaf, Apply]


@dataclass(frozen=True)
class CompositionTree:
    root: Node

    def depth(self) -> int:
        """Max schema-node depth, root at 0; a bare leaf also has depth 0."""

        def go(node: Node, d: int) -> int:
            if isinstance(node, Leaf):
                return 0 if d == 0 else d - 1
            return max([d] + [go(c, d + 1) for c in node.children])

        return go(self.root, 0)

    def schema_nodes(self) -> int:
        def go(node: Node) -> int:
            if isinstance(node, Leaf):
                return 0
            return 1 + sum(go(c) for c in node.children)

        return go(self.root)


def surface(g: Grammar, tree: CompositionTree) -> list[Token]:
    """Flatten a tree back to its surface token sequence."""

    def go(node: Node) -> list[Token]:
        if isinstance(node, Leaf):
            return [node.token]
        s = g.schemas[node.schema_index]
        toks: list[Token] = []
        it = iter(node.children)
        for el in s.pattern:
            if isinstance(el, Slot):
                toks.extend(go(next(it)))
            else:
                toks.append(el.token)
        return toks

    return go(tree.root)


# --- matching ---------------------------------------------------------------


@dataclass(frozen=True)
class Match:
    schema_index: int  # positional index into grammar.schemas
    start: int
    end: int  # exclusive
    args: tuple  # bound atoms, one per slot, in pattern order


def _is_atom_token(t) -> bool:
    return isinstance(t, Token) and t.kind is TokenKind.PRIMITIVE


def _match_at(schema: Schema, items: list, start: int, is_atom) -> tuple | None:
    """Try to match the pattern at a position; returns bound args or None."""
    if start + len(schema.pattern) > len(items):
        return None
    args = []
    for off, el in enumerate(schema.pattern):
        item = items[start + off]
        if isinstance(el, Slot):
            if not is_atom(item):
                return None
            args.append(item)
        else:
            if item != el.token:
                return None
    return tuple(args)


def _iter_matches(g: Grammar, items: list, is_atom) -> list[Match]:
    found = []
    for si, schema in enumerate(g.schemas):
        span = len(schema.pattern)
        for start in range(len(items) - span + 1):
            args = _match_at(schema, items, start, is_atom)
            if args is not None:
                found.append(Match(si, start, start + span, args))
    # Descending priority, then longer span, then leftmost.
    found.sort(key=lambda m: (-g.schemas[m.schema_index].priority, m.start - m.end, m.start))
    return found


def match_instances(g: Grammar, seq: list[Token]) -> list[Match]:
    """All schema instances over a primitive/modifier token sequence."""
    return _iter_matches(g, list(seq), _is_atom_token)


def parse_tree(g: Grammar, seq: list[Token]) -> CompositionTree:
    """Deterministic parse by repeatedly collapsing the first match.

    Raises ParseError when the reduction stalls before a single node remains.
    """
    items: list = list(seq)

    def is_atom(item) -> bool:
        return isinstance(item, (Leaf, Apply)) or _is_atom_token(item)

    def as_node(item) -> Node:
        return item if isinstance(item, (Leaf, Apply)) else Leaf(item)

    while True:
        if len(items) == 1 and is_atom(items[0]):
            return CompositionTree(as_node(items[0]))
        matches = _iter_matches(g, items, is_atom)
        if not matches:
            raise ParseError(
                f"reduction stalled with {len(items)} items: "
                + " ".join(repr(i) for i in items[:12])
            )
        m = matches[0]
        node = Apply(m.schema_index, tuple(as_node(a) for a in m.args))
        items[m.start : m.end] = [node]


def evaluate(g: Grammar, tree: CompositionTree) -> tuple[Token, ...]:
    """Post-order evaluation: prim_eval at leaves, eval templates at applies."""

    def go(node: Node) -> tuple[Token, ...]:
        if isinstance(node, Leaf):
            if node.token not in g.prim_eval:
                raise MissingPrimEval(f"no evaluation for primitive {node.token!r}")
            return g.prim_eval[node.token]
        s = g.schemas[node.schema_index]
        child_vals = [go(c) for c in node.children]
        result: list[Token] = []
        for item in s.eval_template:
            if isinstance(item, ArgRef):
                result.extend(child_vals[item.arg_index])
            else:
                result.append(item.token)
        return tuple(result)

    return go(tree.root)


def marked_surface(g: Grammar, tree: CompositionTree) -> list[Token]:
    """Surface form with every all-leaf-children instance's trigger replaced
    by its schema-name token."""

    def go(node: Node) -> list[Token]:
        if isinstance(node, Leaf):
            return [node.token]
        s = g.schemas[node.schema_index]
        frontier = all(isinstance(c, Leaf) for c in node.children)
        toks: list[Token] = []
        it = iter(node.children)
        seen_trigger = False
        for el in s.pattern:
            if isinstance(el, Slot):
                toks.extend(go(next(it)))
            elif (
                not seen_trigger
                and isinstance(el, Literal)
                and el.token.kind is TokenKind.MODIFIER
            ):
                seen_trigger = True
                toks.append(schema_name(s.name_index) if frontier else el.token)
            else:
                toks.append(el.token)
        return toks

    return go(tree.root)


def oracle_decompose_step(g: Grammar, seq: list[Token]) -> list[Token]:
    """Mark every schema instance whose arguments are all atomic.

    The triggering modifier of each such instance is replaced by the schema's
    name token; everything else is left untouched. One application removes one
    full level of the composition frontier.
    """
    if all(t.kind is not TokenKind.MODIFIER for t in seq):
        return list(seq)
    return marked_surface(g, parse_tree(g, seq))


def pattern_literal_prims(g: Grammar) -> set[Token]:
    """Primitives used as pattern literals (compound anchors)."""
    return {
        el.token
        for s in g.schemas
        for el in s.pattern
        if isinstance(el, Literal) and el.token.kind is TokenKind.PRIMITIVE
    }


# --- grammar file format ----------------------------------------------------
#
# Line-oriented UTF-8 text, '#' comments:
#   SCHEMA <name_index> PRIORITY <int> PATTERN <elem...> EVAL <item...>
#   PRIM <tok> -> <out...>
# where elem is '_' for a slot or a token spelling, and item is '$k' or an
# output token spelling.


def dump_grammar(g: Grammar) -> str:
    lines = [
        f"# bounds P={g.bounds.n_primitives} M={g.bounds.n_modifiers} "
        f"A={g.bounds.max_args_side} S={g.bounds.n_schemas}"
    ]
    for s in sorted(g.schemas, key=lambda s: (-s.priority, s.name_index)):
        pat = " ".join("_" if isinstance(el, Slot) else el.token.spell() for el in s.pattern)
        ev = " ".join(
            f"${it.arg_index}" if isinstance(it, ArgRef) else it.token.spell()
            for it in s.eval_template
        )
        lines.append(f"SCHEMA {s.name_index} PRIORITY {s.priority} PATTERN {pat} EVAL {ev}".rstrip())
    for p in sorted(g.prim_eval, key=lambda t: t.index):
        rhs = " ".join(t.spell() for t in g.prim_eval[p])
        lines.append(f"PRIM {p.spell()} -> {rhs}".rstrip())
    return "\n".join(lines) + "\n"


def load_grammar(text: str, bounds: GrammarBounds | None = None) -> Grammar:
    schemas: list[Schema] = []
    prim_eval: dict[Token, tuple[Token, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "SCHEMA":
                name_index = int(fields[1])
                assert fields[2] == "PRIORITY"
                priority = int(fields[3])
                assert fields[4] == "PATTERN"
                split = fields.index("EVAL")
                pattern = tuple(
                    Slot() if f == "_" else Literal(parse_token(f)) for f in fields[5:split]
                )
                template = tuple(
                    ArgRef(int(f[1:])) if f.startswith("$") else Emit(parse_token(f))
                    for f in fields[split + 1 :]
                )
                schemas.append(Schema(name_index, pattern, priority, template))
            elif fields[0] == "PRIM":
                key = parse_token(fields[1])
                assert fields[2] == "->"
                prim_eval[key] = tuple(parse_token(f) for f in fields[3:])
            else:
                raise ValueError(f"unknown directive {fields[0]!r}")
        except (ValueError, AssertionError, IndexError, SchemakitError) as exc:
            raise ParseError(f"grammar line {lineno}: {exc}") from exc
    return Grammar(schemas, prim_eval, bounds or GrammarBounds())
