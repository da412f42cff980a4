"""Exception hierarchy shared by every module."""


class HomogenizationError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(HomogenizationError, ValueError):
    """A generator, schedule or integrand parameter is out of range."""


class ResolutionError(HomogenizationError, ValueError):
    """The grid is too coarse for the geometry (h >= delta/2, empty annulus)."""


class GridMismatchError(HomogenizationError, ValueError):
    """Fields and masks were built on different grids."""


class OracleSizeError(HomogenizationError, ValueError):
    """A brute-force oracle was asked to solve an instance above its size limit."""


class MonotonicityError(HomogenizationError):
    """A k-ladder produced energies that increase with k. Always a solver bug."""
