"""Exception types raised across the package."""


class NcScaleError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NcScaleError, ValueError):
    """Malformed numeric input: wrong shape, non-finite entries, not Hermitian."""


class DomainError(NcScaleError, ValueError):
    """A matrix function was applied outside its domain.

    ``min_eigenvalue`` carries the offending smallest eigenvalue so callers
    can tell how far from the positive-definite cone the input was.
    """

    def __init__(self, message, min_eigenvalue=None, max_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.max_eigenvalue = max_eigenvalue


class BoundaryProximityError(DomainError):
    """Point is numerically on the boundary of the positive-definite cone."""


class NotFullSupportError(NcScaleError, ValueError):
    """The tuple does not satisfy A C^n = C^n, so the capacity is undefined."""

    def __init__(self, message, left_rank=None, right_rank=None):
        super().__init__(message)
        self.left_rank = left_rank
        self.right_rank = right_rank


class InvalidScalingError(NcScaleError, ValueError):
    """A scaling matrix is singular or has the wrong shape."""


class StallError(NcScaleError, RuntimeError):
    """Sinkhorn hit a singular marginal.

    Attributes
    ----------
    side : str
        ``"left"`` or ``"right"``, the marginal that became singular.
    defect : ndarray, shape (n, k)
        Orthonormal basis of the (numerical) kernel of that marginal.
    trace : FlowTrace or None
        Partial trace, set by the driver that was running when it stalled.
    """

    def __init__(self, message, side, defect, trace=None):
        super().__init__(message)
        self.side = side
        self.defect = defect
        self.trace = trace
