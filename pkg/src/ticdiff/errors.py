"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes; library code raises them
directly so callers can distinguish bad arguments from bad arithmetic.
"""


class TicdiffError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(TicdiffError, ValueError):
    """A value is out of range or inconsistent with the requested operation."""


class ShapeError(TicdiffError, ValueError):
    """An array has the wrong length, dimensionality, or frame width."""


class NumericError(TicdiffError, ArithmeticError):
    """A computation produced non-finite values."""


class DataFormatError(TicdiffError, OSError):
    """A file on disk does not match the expected binary layout."""
