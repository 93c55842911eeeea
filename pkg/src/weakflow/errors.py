"""Exception types raised by the numerical kernels."""


class WeakflowError(Exception):
    """Base class for all errors raised by this package."""


class ZeroOverlap(WeakflowError, ZeroDivisionError):
    """Pre- and postselected coin states are orthogonal; the weak value is undefined."""


class ZeroNorm(WeakflowError, ZeroDivisionError):
    pass


class GridTooCoarse(WeakflowError, ValueError):
    pass


class OnWorldline(WeakflowError, ValueError):
    """Field point coincides with the charge."""


class UndefinedRegion(WeakflowError, ValueError):
    """Superluminal source: the closed-form radicand is not positive here."""


class SubluminalInput(WeakflowError, ValueError):
    pass


class SplitStepUnconverged(WeakflowError, RuntimeError):
    pass


class UnresolvedCells(WeakflowError, RuntimeError):
    """Exact joint amplitude could not be resummed on part of the grid."""
