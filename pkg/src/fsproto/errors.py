"""Exception hierarchy shared across the package."""


class FsprotoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FsprotoError, ValueError):
    """Operands with incompatible shapes, or a non-scalar where a scalar is required."""


class NumericOverflowError(FsprotoError, ArithmeticError):
    """A primitive produced a non-finite value."""


class DataError(FsprotoError, ValueError):
    """Malformed dataset file or record."""


class SplitError(FsprotoError, ValueError):
    """Invalid class-split assignment."""


class EpisodeError(FsprotoError, ValueError):
    """Episode cannot be sampled or is internally inconsistent."""


class FormatError(FsprotoError, ValueError):
    """Binary or text artifact does not match its declared layout."""


class TrainingError(FsprotoError, RuntimeError):
    """Training step could not be completed."""
