"""Exception hierarchy shared by the solvers."""


class RankMFGError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RankMFGError, ValueError):
    """One or more configuration invariants are violated.

    ``problems`` holds the individual violations (each itself a
    ``ValidationError`` subclass naming the offending field).
    """

    def __init__(self, message, problems=None, field=None):
        super().__init__(message)
        self.field = field
        self.problems = list(problems) if problems is not None else [self]


class NonPositiveParameter(ValidationError):
    def __init__(self, field, value=None):
        super().__init__(f"{field} must be > 0 (got {value!r})", field=field)


class NegativeParameter(ValidationError):
    def __init__(self, field, value=None):
        super().__init__(f"{field} must be >= 0 (got {value!r})", field=field)


class AlphaOutOfRange(ValidationError):
    def __init__(self, value=None, field="alpha"):
        super().__init__(f"{field} must lie in the open interval (0, 1) (got {value!r})", field=field)


class DegenerateGrid(ValidationError):
    def __init__(self, field, detail=""):
        super().__init__(f"degenerate grid: {field} {detail}".strip(), field=field)


class ConfigError(ValidationError):
    """Malformed configuration file (unknown key, unparsable value, ...)."""


class EmptySample(RankMFGError, ValueError):
    pass


class NonFiniteSample(RankMFGError, ValueError):
    pass


class NegativeVariance(RankMFGError, ValueError):
    pass


class InvalidLaw(RankMFGError, ValueError):
    pass


class TimeOutOfRange(RankMFGError, ValueError):
    pass


class SolverError(RankMFGError, RuntimeError):
    """A numerical routine failed to meet its own contract."""


class GridTooNarrow(SolverError):
    pass


class QuadratureUnderflow(SolverError):
    pass


class MassLoss(SolverError):
    pass


class NoConvergence(SolverError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class PathsNotStored(RankMFGError, ValueError):
    pass


class IoError(RankMFGError, OSError):
    pass
