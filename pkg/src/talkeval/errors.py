"""Exception hierarchy shared by all talkeval modules.

Every error maps onto one of three CLI exit codes so that shell pipelines
can distinguish bad inputs (2) from violated preconditions or internal
inconsistencies (3) and remote-service failures (4).
"""


class TalkevalError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputError(TalkevalError):
    """Malformed or invalid input data (bad encoding, bad file, bad value)."""

    exit_code = 2


class PreconditionError(TalkevalError):
    """An operation was called with arguments violating its contract."""

    exit_code = 3


class ConsistencyError(TalkevalError):
    """Internal invariant violated, e.g. spans out of bounds or paired files disagree."""

    exit_code = 3


class ParseError(InputError):
    """Structured text (highlight format, report, annotation file) failed to parse."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UndefinedMetricError(PreconditionError):
    """Metric has no defined value for this input (empty reference, constant series)."""


class ConfigError(InputError):
    """Endpoint or environment misconfiguration (e.g. missing API key)."""


class TransportError(TalkevalError):
    """Remote model endpoint unreachable or persistently failing."""

    exit_code = 4


class RequestError(TalkevalError):
    """Remote endpoint rejected the request (HTTP 4xx); retrying will not help."""

    exit_code = 4


class AnnotationError(TalkevalError):
    """Model produced unusable annotation output; carries the raw text."""

    exit_code = 4

    def __init__(self, message: str, raw_text: str | None = None):
        super().__init__(message)
        self.raw_text = raw_text
