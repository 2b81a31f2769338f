"""Exception types shared across the package."""


class TransrecError(Exception):
    pass


class DimensionError(TransrecError, ValueError):
    pass


class ParameterError(TransrecError, ValueError):
    pass


class ContractError(TransrecError, ValueError):
    pass


class ParseError(TransrecError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(TransrecError, ValueError):
    pass


class DatasetError(TransrecError, ValueError):
    pass


class ConfigError(TransrecError, ValueError):
    pass


class CheckpointError(TransrecError, ValueError):
    pass


class MergeError(TransrecError, ValueError):
    pass


class DivergenceError(TransrecError, RuntimeError):
    pass
