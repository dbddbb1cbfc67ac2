"""Exception hierarchy shared across the package."""


class GLWalkError(Exception):
    """Base class for all package errors."""


class GeometryError(GLWalkError, ValueError):
    """Invalid lattice geometry (side length, dimension, index)."""


class UnsupportedDimensionError(GLWalkError, ValueError):
    """Operation only defined for one-dimensional tori."""


class PotentialDomainError(GLWalkError, ValueError):
    """Potential evaluated at a non-finite point."""


class ConvexityViolation(GLWalkError, ValueError):
    """Second derivative leaves the declared [C_minus, C_plus] window."""

    def __init__(self, message, x=None, value=None):
        super().__init__(message)
        self.x = x
        self.value = value


class WrongSamplerError(GLWalkError, ValueError):
    """Exact Gaussian sampler requested for a non-Gaussian Hamiltonian."""


class ConfigurationError(GLWalkError, ValueError):
    """Inconsistent simulation parameters (step size, lattices, ...)."""


class StepSizeError(ConfigurationError):
    """Thinning probabilities per substep would reach one."""


class HorizonError(GLWalkError, RuntimeError):
    """Walk displacement approached the torus size (wraparound risk)."""


class DiagnosticError(GLWalkError, RuntimeError):
    """A fit or estimator failed its quality diagnostic."""


class UndefinedESSError(GLWalkError, ValueError):
    """Effective sample size of a constant series."""


class SizeError(GLWalkError, ValueError):
    """Dense linear algebra requested beyond the supported size."""


class ModelError(GLWalkError, RuntimeError):
    """Linear-algebra model inconsistent with its declared structure."""


class TuningWarning(UserWarning):
    """MCMC acceptance rate outside the healthy window."""


class TruncationWarning(UserWarning):
    """Time integral truncated before the integrand decayed."""


class RegularizationWarning(UserWarning):
    """Quadratic form needed a ridge to be solvable."""
