"""Exception types raised across the package."""


class DegenerateDataError(ValueError):
    """Raised when data cannot support a computation (e.g. zero bandwidth)."""


class SingularMatrixError(ValueError):
    """Raised when an affine map is not invertible."""


class CapabilityError(TypeError):
    """Raised when a model lacks a capability such as a Jacobian."""


class DivergenceError(FloatingPointError):
    """Raised when an iteration produces non-finite values.

    Parameters
    ----------
    step : int
        Index of the step that produced the non-finite state.
    message : str, optional
        Extra context.
    """

    def __init__(self, step, message=""):
        self.step = step
        text = f"non-finite state at step {step}"
        if message:
            text = f"{text}: {message}"
        super().__init__(text)


class ConfigError(ValueError):
    """Raised for invalid experiment configuration."""
