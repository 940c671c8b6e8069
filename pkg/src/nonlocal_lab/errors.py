"""Exception types shared across the package."""


class NonlocalLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NonlocalLabError, ValueError):
    """Invalid or inconsistent input data."""


class InadmissibleExponents(ConfigurationError):
    """The forcing exponents (q, r) violate a required inequality.

    ``inequality`` names the violated condition so callers can report it.
    """

    def __init__(self, message, inequality):
        super().__init__(message)
        self.inequality = inequality


class NonFiniteValue(NonlocalLabError, ArithmeticError):
    """A model callback or intermediate quantity produced NaN/inf."""

    def __init__(self, message, sample=None, index=None):
        super().__init__(message)
        self.sample = sample
        self.index = index


class TimeOutOfRange(ConfigurationError):
    pass


class MollifierWidthError(ConfigurationError):
    pass


class RegionError(ConfigurationError):
    """A region/cylinder does not fit inside the stored data."""


class UnsupportedExterior(ConfigurationError):
    """Exterior data cannot be certified to lie in the tail space."""


class CFLViolation(ConfigurationError):
    def __init__(self, message, dt, dt_max):
        super().__init__(message)
        self.dt = dt
        self.dt_max = dt_max


class PicardNonConvergence(NonlocalLabError, RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LevelBelowThreshold(ConfigurationError):
    def __init__(self, message, threshold):
        super().__init__(message)
        self.threshold = threshold


class KernelClassViolation(ConfigurationError):
    """A kernel coefficient left the ellipticity class it must belong to."""
