"""Exception hierarchy shared by every lowra module."""


class LowraError(Exception):
    """Base class for all errors raised by lowra."""


class DataError(LowraError, ValueError):
    """Input values are invalid (NaN/Inf, out-of-range codes, zero weights)."""


class ShapeError(LowraError, ValueError):
    """Array shapes or lengths are inconsistent."""


class ConfigError(LowraError, ValueError):
    """Unsupported option such as a precision outside {1, 2, 4}."""


class FormatError(LowraError):
    """A serialized file or packed payload is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InfeasibleBudgetError(LowraError):
    """The bit budget cannot cover every channel at the minimum precision."""

    def __init__(self, message, min_bpp):
        super().__init__(f"{message}; minimum achievable bpp is {min_bpp:.6g}")
        self.min_bpp = min_bpp


class SolverTimeout(LowraError):
    """The cluster ILP hit its work limit before proving optimality.

    ``incumbent`` holds the best feasible quota found so far (or None).
    """

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent
        self.proven_optimal = False


class StageError(LowraError):
    """Wraps an error raised inside one stage of the end-to-end pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
