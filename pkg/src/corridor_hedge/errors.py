"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain (bad parameters, x outside the corridor, ...)."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced a non-finite result."""


class DivergentIntegral(NumericalError):
    """An improper integral that should be finite does not converge."""


class AssumptionViolated(NumericalError):
    """The sign pattern of the sign function is not one of the supported cases."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NoBracket(NumericalError):
    """A root search could not find a sign change."""


class VerificationFailed(NumericalError):
    """A candidate free-boundary solution failed its a-posteriori checks."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(ValueError):
    """Invalid simulation or CLI configuration."""
