"""Exception hierarchy; the CLI maps each family to an exit code."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


class NumericalError(RuntimeError):
    """A linear solve, decomposition or truncation failed."""


class SingularSystemError(NumericalError):
    """Linear system is singular or too ill-conditioned to trust."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class TruncationError(NumericalError):
    """Result depends on the truncation order beyond tolerance."""


class FitError(RuntimeError):
    """Every fit trial failed, or the input data cannot be fitted."""
