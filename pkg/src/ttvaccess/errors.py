"""Exception hierarchy. The CLI maps these onto exit codes."""


class TTVError(Exception):
    """Base class for all errors raised by ttvaccess."""


class InputError(TTVError):
    """An input file is missing, malformed, or inconsistent (exit code 2)."""


class GTFSError(InputError):
    """A GTFS feed failed validation.

    ``file``, ``line`` and ``column`` locate the offending cell when known.
    """

    def __init__(self, message, file=None, line=None, column=None):
        self.file = file
        self.line = line
        self.column = column
        where = ":".join(str(x) for x in (file, line) if x is not None)
        if column is not None:
            where = f"{where} [{column}]" if where else f"[{column}]"
        super().__init__(f"{where}: {message}" if where else message)


class DanglingReferenceError(GTFSError):
    def __init__(self, message, ref, **kw):
        self.ref = ref
        super().__init__(message, **kw)


class NoServiceError(InputError):
    """No trip runs on the requested service date."""


class UndefinedStatisticError(ValueError, TTVError):
    """A statistic is undefined for the given input (zero variance, unreachable entries...)."""


class StageError(TTVError):
    """A pipeline stage failed (exit code 3)."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
