"""Exception hierarchy shared by the library and the CLI."""


class CsiError(Exception):
    """Base class for every error raised by csiclean."""


class DataError(CsiError, ValueError):
    """Input data is malformed, inconsistent, or missing."""


class CorruptFileError(DataError):
    """A CSIB file failed validation while being read."""


class NumericalError(CsiError, ArithmeticError):
    """An estimator hit a degenerate numerical case.

    ``method`` and ``frame`` locate the failure when known.
    """

    def __init__(self, message, method=None, frame=None):
        self.method = method
        self.frame = frame
        where = []
        if method is not None:
            where.append(f"method={method}")
        if frame is not None:
            where.append(f"frame={frame}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
