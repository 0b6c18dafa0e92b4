"""Exception hierarchy shared by all modules."""


class SensDecayError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(SensDecayError, ValueError):
    """Block layout or dimensions are inconsistent."""


class ValidationError(SensDecayError, ValueError):
    """Input violates a mathematical precondition (symmetry, sign, range)."""


class NumericError(SensDecayError, ArithmeticError):
    """A non-finite value appeared during evaluation."""


class DivergenceError(NumericError):
    """A simulated state exceeded the blow-up threshold."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotPositiveDefiniteError(ValidationError):
    """The state weight is not positive definite, so no decay bound can be certified."""


class CertificateUnavailableError(SensDecayError):
    """No controllability certificate can be constructed for these parameters."""


class PreconditionError(SensDecayError, ValueError):
    """A check was requested on data that does not satisfy its hypotheses."""


class ConfigError(SensDecayError, ValueError):
    """Invalid experiment configuration."""


class SolverError(SensDecayError, RuntimeError):
    """The optimal control solver failed."""
