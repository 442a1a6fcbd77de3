"""Exception hierarchy shared by every stage of the pipeline."""


class CohoflowError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CohoflowError, ValueError):
    """Input data violates a precondition (shape, symmetry, sign, finiteness)."""


class InvalidDimensionError(CohoflowError, ValueError):
    """A simplex or homology dimension is out of the available range."""


class InvalidStateError(CohoflowError, RuntimeError):
    """Cached state is missing or no longer matches its source."""


class NumericalOverflowError(CohoflowError, ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UndefinedCorrelationError(CohoflowError, ValueError):
    """Pearson correlation requested for a zero-variance signal."""


class ZeroVarianceError(CohoflowError, ValueError):
    """A channel is constant where a nonzero variance is required."""

    def __init__(self, message, channel=None):
        super().__init__(message)
        self.channel = channel


class ParseError(CohoflowError, ValueError):
    """Malformed input file; carries the offending line/column when known."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class RaggedRowError(ParseError):
    """A CSV row has a different number of cells than the first row."""


class NonNumericCellError(ParseError):
    """A CSV cell could not be parsed as a number."""


class AsymmetricMatrixError(ParseError):
    """A matrix file that must be symmetric is not."""
