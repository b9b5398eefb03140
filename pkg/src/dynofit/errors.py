"""Exception types shared across the package."""


class DynofitError(Exception):
    """Base class for all package-specific errors."""


class DivergenceError(DynofitError):
    """An ODE trajectory left the finite range during integration.

    ``index`` is the first sample index at which a non-finite state was
    produced. Estimators treat this as a score of -inf for the offending
    parameter rather than a failure of the whole run.
    """

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"trajectory diverged at sample index {index}")


class DegenerateDataError(DynofitError):
    """Samples carry no usable geometry (e.g. every point duplicated)."""


class DegenerateKernelError(DynofitError):
    """A centered Gram matrix is numerically zero (all-ones kernel limit)."""


class AllDivergedError(DynofitError):
    """Every candidate parameter produced a divergent trajectory."""


class ZeroTrueParameterError(DynofitError):
    """Relative estimation error is undefined for a zero true parameter."""


class ConfigError(DynofitError):
    """Invalid experiment or estimation configuration.

    ``location`` points at the offending part of the config (a JSON path
    like ``$.observation.kind`` or a file:line position for parse errors).
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
