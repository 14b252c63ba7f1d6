"""Exception hierarchy shared across the toolkit."""


class PLCNoiseError(Exception):
    """Base class for all toolkit errors."""


class IngestError(PLCNoiseError, ValueError):
    """Malformed, truncated or out-of-range trace input.

    ``offset`` is a byte offset for packed-binary files and a 1-based line
    number for CSV files (``None`` when not applicable); ``unit`` says which.
    """

    def __init__(self, message, offset=None, unit="byte"):
        if offset is not None:
            message = f"{message} (at {unit} {offset})"
        super().__init__(message)
        self.offset = offset
        self.unit = unit


class EmptyReportError(PLCNoiseError, ValueError):
    pass


class RegularizationError(PLCNoiseError, ValueError):
    pass


class DegenerateSeriesError(PLCNoiseError, ValueError):
    """Series has zero variance where a statistic needs spread."""


class FitError(PLCNoiseError, RuntimeError):
    """Maximum-likelihood fit failed.

    ``best`` holds the best parameters seen so far, when any exist.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(PLCNoiseError, ValueError):
    pass


class StageError(PLCNoiseError, RuntimeError):
    pass
