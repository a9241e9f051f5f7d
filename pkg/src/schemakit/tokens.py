"""Token universe and the fixed transformer vocabulary layout.

Tokens are symbolic (kind, index) pairs. The flat integer ids the model
consumes are owned by :class:`VocabConfig`, which lays the vocabulary out as
contiguous blocks in a fixed order: primitives, modifiers, argument markers,
schema names, priority ranks, then the administrative tokens. Output tokens
live in their own namespace and never enter the model vocabulary; they only
appear in evaluator templates and unwound results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import SchemakitError


class TokenKind(enum.Enum):
    PRIMITIVE = "PRIM"
    MODIFIER = "MOD"
    ARG = "ARG"
    SCHEMA = "SC"
    PRIORITY = "PRIORITY"
    ADMIN = "ADMIN"
    OUTPUT = "OUT"


ADMIN_NAMES = ("EOS", "SEP", "SC_DEF", "SC_PRI", "SC_SEP", "LP_SEP", "PAD")


@dataclass(frozen=True, slots=True)
class Token:
    kind: TokenKind
    index: int

    def spell(self) -> str:
        if self.kind is TokenKind.ADMIN:
            return ADMIN_NAMES[self.index]
        return f"{self.kind.value}_{self.index}"

    def __repr__(self) -> str:
        return self.spell()


def prim(i: int) -> Token:
    return Token(TokenKind.PRIMITIVE, i)


def mod(i: int) -> Token:
    return Token(TokenKind.MODIFIER, i)


def arg(i: int) -> Token:
    return Token(TokenKind.ARG, i)


def schema_name(i: int) -> Token:
    return Token(TokenKind.SCHEMA, i)


def priority_token(i: int) -> Token:
    return Token(TokenKind.PRIORITY, i)


def out(i: int) -> Token:
    return Token(TokenKind.OUTPUT, i)


EOS = Token(TokenKind.ADMIN, 0)
SEP = Token(TokenKind.ADMIN, 1)
SC_DEF = Token(TokenKind.ADMIN, 2)
SC_PRI = Token(TokenKind.ADMIN, 3)
SC_SEP = Token(TokenKind.ADMIN, 4)
LP_SEP = Token(TokenKind.ADMIN, 5)
PAD = Token(TokenKind.ADMIN, 6)

_ADMIN_BY_NAME = {name: Token(TokenKind.ADMIN, i) for i, name in enumerate(ADMIN_NAMES)}


def parse_token(spelling: str) -> Token:
    """Inverse of Token.spell() for non-output kinds (plus OUT_k)."""
    if spelling in _ADMIN_BY_NAME:
        return _ADMIN_BY_NAME[spelling]
    head, _, tail = spelling.rpartition("_")
    if head and tail.isdigit():
        for kind in TokenKind:
            if kind is not TokenKind.ADMIN and head == kind.value:
                return Token(kind, int(tail))
    raise SchemakitError(f"unparseable token spelling: {spelling!r}")


@dataclass(frozen=True)
class VocabConfig:
    """Vocabulary bounds plus the derived flat id layout.

    n_schemas must be >= n_modifiers: every modifier needs at least one schema
    for the grammar to be well-defined.
    """

    n_primitives: int = 16
    n_modifiers: int = 12
    max_args_side: int = 2
    n_schemas: int = 20

    def __post_init__(self):
        if self.n_schemas < self.n_modifiers:
            raise SchemakitError(
                f"n_schemas ({self.n_schemas}) must be >= n_modifiers ({self.n_modifiers})"
            )

    @property
    def n_arg_tokens(self) -> int:
        return 2 * self.max_args_side + 1

    @property
    def size(self) -> int:
        return (
            self.n_primitives
            + self.n_modifiers
            + self.n_arg_tokens
            + 2 * self.n_schemas
            + len(ADMIN_NAMES)
        )

    def _block_start(self, kind: TokenKind) -> int:
        offsets = {
            TokenKind.PRIMITIVE: 0,
            TokenKind.MODIFIER: self.n_primitives,
            TokenKind.ARG: self.n_primitives + self.n_modifiers,
            TokenKind.SCHEMA: self.n_primitives + self.n_modifiers + self.n_arg_tokens,
            TokenKind.PRIORITY: self.n_primitives
            + self.n_modifiers
            + self.n_arg_tokens
            + self.n_schemas,
            TokenKind.ADMIN: self.n_primitives
            + self.n_modifiers
            + self.n_arg_tokens
            + 2 * self.n_schemas,
        }
        return offsets[kind]

    def _block_size(self, kind: TokenKind) -> int:
        return {
            TokenKind.PRIMITIVE: self.n_primitives,
            TokenKind.MODIFIER: self.n_modifiers,
            TokenKind.ARG: self.n_arg_tokens,
            TokenKind.SCHEMA: self.n_schemas,
            TokenKind.PRIORITY: self.n_schemas,
            TokenKind.ADMIN: len(ADMIN_NAMES),
        }[kind]

    def token_to_id(self, token: Token) -> int:
        if token.kind is TokenKind.OUTPUT:
            raise SchemakitError("output tokens have no model vocabulary id")
        if not 0 <= token.index < self._block_size(token.kind):
            raise SchemakitError(f"token {token!r} outside vocabulary bounds")
        return self._block_start(token.kind) + token.index

    def id_to_token(self, tid: int) -> Token:
        if not 0 <= tid < self.size:
            raise SchemakitError(f"id {tid} outside vocabulary of size {self.size}")
        for kind in (
            TokenKind.PRIMITIVE,
            TokenKind.MODIFIER,
            TokenKind.ARG,
            TokenKind.SCHEMA,
            TokenKind.PRIORITY,
            TokenKind.ADMIN,
        ):
            start = self._block_start(kind)
            if tid < start + self._block_size(kind):
                return Token(kind, tid - start)
        raise AssertionError("unreachable")

    def _tables(self):
        cached = self.__dict__.get("_table_cache")
        if cached is None:
            by_token = {}
            by_id = []
            for tid in range(self.size):
                tok = self.id_to_token(tid)
                by_token[tok] = tid
                by_id.append(tok)
            cached = (by_token, by_id)
            object.__setattr__(self, "_table_cache", cached)
        return cached

    def encode_ids(self, tokens) -> list[int]:
        by_token = self._tables()[0]
        return [by_token[t] for t in tokens]

    def decode_ids(self, ids) -> list[Token]:
        by_id = self._tables()[1]
        return [by_id[i] for i in ids]
