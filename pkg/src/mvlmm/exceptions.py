"""Exception types raised by the fitting engine."""


class ParameterShapeError(ValueError):
    """A parameter vector or matrix does not match the model dimensions."""


class DataError(ValueError):
    """Input data violates a structural requirement of the model."""


class NotPositiveDefinite(ValueError):
    """Cholesky factorization hit a non-positive pivot.

    Attributes
    ----------
    pivot : int
        Zero-based index of the failing pivot.
    """

    def __init__(self, message, pivot=-1):
        super().__init__(message)
        self.pivot = pivot


class RankDeficientFixedDesign(NotPositiveDefinite):
    """The Schur complement of the fixed-effects block is not positive definite."""


class InitError(ValueError):
    """The starting point of an optimization is infeasible."""


class EmNumericalError(ArithmeticError):
    """A per-group linear system in the EM E-step is singular."""


class BuilderError(ValueError):
    """A random-effects covariance built from scale/correlation inputs is not positive definite."""

    def __init__(self, message, pivot=-1):
        super().__init__(message)
        self.pivot = pivot


class LoadError(ValueError):
    """CSV or model-spec input could not be parsed.

    ``row`` is 1-based counting the header as row 0, ``column`` is the header name.
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column
