"""Exception hierarchy. Each class carries the CLI exit code for its failure class."""


class TracerError(Exception):
    exit_code = 1


class InputError(TracerError):
    """Unreadable input, malformed file, or invalid configuration."""

    exit_code = 2


class TrajectoryParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(TrajectoryParseError):
    pass


class InvariantError(TrajectoryParseError):
    pass


class ConfigError(InputError):
    pass


class ScenarioSpecError(InputError):
    pass


class DataError(TracerError):
    """Data is well-formed but unusable for the request (e.g. one outcome class)."""

    exit_code = 3


class CalibrationError(DataError):
    pass


class EvaluationError(DataError):
    pass


class ContractError(TracerError, ValueError):
    """A function was called outside its precondition."""


class DimensionError(ContractError):
    pass


class EmbeddingProviderError(TracerError):
    exit_code = 4
