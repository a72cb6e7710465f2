"""Exception hierarchy shared by all modules."""


class DenseInlaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatrix(DenseInlaError, ValueError):
    """Matrix is not square, not finite, or otherwise malformed."""


class RankMismatch(DenseInlaError, ValueError):
    """Declared rank deficiency disagrees with the numerical spectrum."""


class NumericalFailure(DenseInlaError, ArithmeticError):
    """A computation overflowed or hit a singular system."""


class NotConverged(DenseInlaError, RuntimeError):
    """An iterative procedure hit its iteration cap.

    ``last`` carries the final iterate so callers can report partial results.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class InvalidSize(DenseInlaError, ValueError):
    """A structure size is too small for the requested construction."""


class InvalidGraph(DenseInlaError, ValueError):
    """Neighbourhood graph is asymmetric, out of range, or has islands."""


class InvalidData(DenseInlaError, ValueError):
    """Observation indices or values are out of range."""


class DegenerateParams(DenseInlaError, ValueError):
    """Hyperparameters map to a zero variance."""


class ParseError(DenseInlaError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Unsupported(DenseInlaError, ValueError):
    """Requested operation is outside the supported problem size."""
