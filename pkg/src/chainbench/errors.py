"""Exception types shared across the harness."""


class ChainbenchError(Exception):
    pass


class InvalidArgument(ChainbenchError, ValueError):
    pass


class ConfigurationError(ChainbenchError):
    """A config value is invalid; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class LedgerError(ChainbenchError):
    pass


class AlreadyExists(LedgerError):
    pass


class UnknownAddress(LedgerError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class MeasurementError(ChainbenchError):
    pass


class RunFailed(ChainbenchError):
    pass
