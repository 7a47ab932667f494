"""Exception types shared across the package."""


class FastBciError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FastBciError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class DataFormatError(FastBciError, ValueError):
    """A file (EDF, archive, model, report) does not match its declared layout."""


class InsufficientDataError(FastBciError, ValueError):
    """Not enough trials to satisfy a sampling or training precondition."""


class MissingGradientError(FastBciError, RuntimeError):
    """An optimizer step was requested before gradients were populated."""
