"""Exception hierarchy shared across the package.

The split mirrors how callers need to react: bad configuration or bad
arguments (`ValidationError`), problems with the content of otherwise
well-formed records (`DataError`), and transport-level backend trouble
(`BackendError`). The CLI maps these onto distinct exit codes.
"""


class ConformalRouterError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ConformalRouterError, ValueError):
    """Invalid argument, schema violation, or malformed configuration."""


class DataError(ConformalRouterError):
    """A record is missing data that the requested operation needs."""


class StrategyUnavailableError(DataError):
    """A routing strategy needs a record field that is absent."""


class RecordErrorReport(DataError):
    """Aggregate of per-record data errors collected during a corpus run.

    ``errors`` is a list of ``(record_id, message)`` pairs, in input order.
    """

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        lines = "; ".join(f"{rid}: {msg}" for rid, msg in self.errors[:5])
        suffix = "" if len(self.errors) <= 5 else f" (+{len(self.errors) - 5} more)"
        super().__init__(f"{len(self.errors)} record error(s): {lines}{suffix}")


class BackendError(ConformalRouterError):
    """Base class for model-backend failures."""


class BackendUnavailableError(BackendError):
    """Backend unreachable after exhausting retries."""


class ProtocolError(BackendError):
    """Backend answered, but the payload is not in the expected shape."""
