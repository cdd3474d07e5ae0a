"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters or configuration (CLI exit code 1)."""


class NumericalError(ArithmeticError):
    """A run produced NaN/Inf, a non-positive volume, or a failed consistency check (exit code 2)."""


class DegeneracyError(NumericalError):
    """The discrete curve stopped being an immersion: |dF/dtheta| fell below the threshold."""

    def __init__(self, message: str, node: int | None = None, speed: float | None = None):
        super().__init__(message)
        self.node = node
        self.speed = speed
