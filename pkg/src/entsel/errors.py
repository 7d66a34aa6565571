"""Exception types shared across the package."""


class EntselError(Exception):
    """Base class for package errors."""


class ShapeError(EntselError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class GraphError(EntselError, RuntimeError):
    """Autodiff graph misuse: no graph, reused graph, or detached loss."""


class NumericError(EntselError, ArithmeticError):
    """Non-finite values detected (NaN/Inf)."""


class LayoutError(EntselError, ValueError):
    """A token layout cannot be built (over-length, bad spans, bad pools)."""


class DataError(EntselError, ValueError):
    """Malformed dataset, vocabulary, config, or artifact file."""
