from typing import Optional


class USAAVError(Exception):
    """Base class for every error raised by usaav."""


class DimensionError(USAAVError, ValueError):
    """Arrays or vectors of incompatible dimensions."""


class GeometryError(USAAVError, ValueError):
    """A geometric precondition failed (norms, orthogonality, caps)."""


class KernelError(USAAVError, ValueError):
    """Invalid kernel parameters or labels the kernel cannot use."""


class ConfigError(USAAVError, ValueError):
    """Invalid experiment configuration."""


class NumericalAbort(USAAVError, RuntimeError):
    """Raised when an integration produces non-finite states.

    Args:
        message (str): Diagnostic text.
        step (int): Index of the offending step.
        time (float): Simulation time at the start of that step.
    """

    def __init__(
        self, message: str, step: Optional[int] = None,
        time: Optional[float] = None
    ) -> None:
        super().__init__(message)
        self.step = step
        self.time = time
