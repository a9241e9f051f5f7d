"""Exception types shared across the package."""


class SchemakitError(Exception):
    pass


class ParseError(SchemakitError):
    """Sequence is not derivable under the grammar (or a file line is malformed)."""


class MissingPrimEval(SchemakitError):
    """A leaf primitive has no evaluation entry."""


class BoundsExceeded(SchemakitError):
    """Grammar exceeds the vocabulary bounds it is being encoded against."""


class VocabOverflow(SchemakitError):
    """More distinct surfaces than the vocabulary layout allows."""


class ContextOverflow(SchemakitError):
    """Encoded sample does not fit the model context."""


class GenerationError(SchemakitError):
    """Sample generation failed after exhausting its retry budget."""


class NoEligibleSub(GenerationError):
    """An argument required a sub-schema but no schema has higher priority."""


class EmptyBuffer(SchemakitError):
    """Sampling from a grammar buffer with no entries."""


class NonFiniteLoss(SchemakitError):
    """Training loss became NaN/Inf; aborts with diagnostics."""


class LengthCapExceeded(SchemakitError):
    """Greedy decoding ran past its length cap without emitting EOS."""


class MalformedMarking(SchemakitError):
    """A schema-name token's surrounding span does not fit the schema pattern."""


class PlaceholderExhausted(SchemakitError):
    """No unused primitive ids left to allocate as placeholders."""


class UnknownPlaceholder(SchemakitError):
    """Unwinding hit a placeholder with no binding."""


class InexpressibleSchema(SchemakitError):
    """An extracted template cannot be expressed as a one-token-per-slot schema."""


class BudgetExhausted(SchemakitError):
    """Enumeration cap reached."""
