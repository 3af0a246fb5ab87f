"""Exception hierarchy shared by every stage of the pipeline."""


class ForecastError(Exception):
    """Base class for all package errors."""


class DimensionError(ForecastError, ValueError):
    pass


class ConfigError(ForecastError, ValueError):
    pass


class DataError(ForecastError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message)


class InsufficientDataError(DataError):
    pass


class DegenerateGraphError(ForecastError, ValueError):
    pass


class EvaluationError(ForecastError, ArithmeticError):
    """A loss or metric could not be evaluated (non-finite value, empty mask, zero variance)."""


class UsageError(ForecastError, RuntimeError):
    pass


class DivergenceError(ForecastError, ArithmeticError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class CheckpointError(ForecastError, IOError):
    pass


class InputError(ForecastError, ValueError):
    """A pipeline stage received nothing it can work on (no supervised windows, empty range)."""
