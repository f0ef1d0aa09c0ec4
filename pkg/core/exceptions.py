"""Error hierarchy shared by every covlap app.

Each class carries the process exit code the management commands use when
the error escapes a command: 1 for runtime failures, 2 for usage/config.
Errors raised inside a worker process are pickled back to the parent, so
classes with extra constructor arguments define `__reduce__`.
"""


class CovlapError(Exception):
    exit_code = 1


class ConfigError(CovlapError):
    exit_code = 2


class NotPositiveDefinite(CovlapError):
    """The matrix is not numerically positive definite."""

    def __init__(self, message="matrix is not positive definite", pivot=None):
        super().__init__(message)
        self.pivot = pivot

    def __reduce__(self):
        return type(self), (str(self), self.pivot)


class DimensionMismatch(CovlapError):
    pass


class StructureViolation(CovlapError):
    """A covariance entry forced to zero by the edge set is not zero."""

    def __init__(self, i, j, value):
        super().__init__(f"entry ({i},{j}) = {value!r} but the pair is excluded from the structure")
        self.i, self.j, self.value = i, j, value

    def __reduce__(self):
        return type(self), (self.i, self.j, self.value)


class NonpositiveU(CovlapError):
    """The quadratic form u of a column update is not positive."""

    def __init__(self, column, u):
        super().__init__(f"u = {u!r} <= 0 while updating column {column}; sample covariance interaction is not PD")
        self.column, self.u = column, u

    def __reduce__(self):
        return type(self), (self.column, self.u)


class InfeasibleModel(CovlapError):
    pass


class InfeasibleInitialModel(CovlapError):
    pass


class GenerationFailed(CovlapError):
    pass


class InsufficientClassCount(CovlapError):
    pass


class EmptyTestSet(CovlapError):
    pass


class DataFormatError(CovlapError):
    """Malformed input file; `line` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ''
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")
        self.message, self.path, self.line = message, path, line

    def __reduce__(self):
        return type(self), (self.message, self.path, self.line)
