"""Exception hierarchy for the causalspan package.

DataError subclasses map to CLI exit code 3, NumericError subclasses to
exit code 4, ConfigError to exit code 2.
"""


class CausalSpanError(Exception):
    """Base class for all errors raised by this package."""


class DataError(CausalSpanError):
    """Input data cannot be ingested or interpreted."""


class EmptyText(DataError):
    """Tokenization produced no tokens."""


class MalformedRow(DataError):
    """A data file row has the wrong shape."""


class AlignmentFailure(DataError):
    """A gold span string could not be aligned to token boundaries."""


class OverlapViolation(DataError):
    """Cause and effect token ranges overlap within one tuple."""


class TooFewExamples(DataError):
    """Not enough examples for the requested fold count."""


class UnknownId(DataError):
    """A prediction refers to a segment id absent from the gold corpus."""


class MissingSegment(DataError):
    """A precomputed-vector file has no record for the segment."""


class WidthMismatch(DataError):
    """Precomputed vectors have the wrong width."""


class RowCountMismatch(DataError):
    """Precomputed vectors have the wrong row count."""


class ConfigError(CausalSpanError):
    """Bad run configuration (unknown key, unparseable value)."""


class NumericError(CausalSpanError):
    """Numerical failure during model computation."""


class DimensionMismatch(NumericError):
    """Parameter shapes disagree with the configured dimensions."""


class NonFiniteLoss(NumericError):
    """Training produced a NaN or infinite loss."""


class TargetOutOfRange(NumericError):
    """A gold index lies outside the segment's positions."""


class InvalidSpan(NumericError):
    """A span violates 1 <= start <= end <= n."""


class NoValidSpan(CausalSpanError):
    """Every admissible (start, end) pair has zero probability mass."""


class DegenerateVariance(CausalSpanError):
    """Paired differences have zero variance; the t statistic is undefined."""
