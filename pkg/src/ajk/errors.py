"""Exception types raised across the package.

Every error carries a short machine-readable ``kind`` so the command line
front end can map it to an exit code without string matching.
"""


class AJKError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(AJKError, ValueError):
    """Malformed model description or command line input."""

    kind = "config"


class OutOfDomain(AJKError, ValueError):
    """Argument outside the admissible range (time, state or Fourier variable)."""

    kind = "config"


class DomainViolation(AJKError, ValueError):
    """A jump-measure component puts mass outside the state space."""

    kind = "config"


class NotAnAtom(AJKError, ValueError):
    """Jump transform requested at a time that carries no atom of the driver."""

    kind = "config"


class InvalidProbability(AJKError, ValueError):
    kind = "config"


class InvalidRate(AJKError, ValueError):
    kind = "config"


class InvalidTimes(AJKError, ValueError):
    kind = "config"


class InvalidNoise(AJKError, ValueError):
    kind = "config"


class InsufficientPaths(AJKError, ValueError):
    kind = "config"


class NumericalError(AJKError, ArithmeticError):
    """Base class for failures of a numerical routine."""

    kind = "numerical"


class QuadratureFailure(NumericalError):
    pass


class PreconditionViolated(NumericalError):
    """A factor ``1 + L dA`` of a pseudo-exponential went negative."""


class DivergentIntegral(NumericalError):
    pass


class BlowUp(NumericalError):
    """A solution left every bounded set before reaching the requested time."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DomainExit(NumericalError):
    """The Riccati solution left ``C_{<=0}^m x iR^n``."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
