"""Exception hierarchy shared by the library, the service and the CLI."""


class OrdscoreError(Exception):
    exit_code = 1


class ConfigError(OrdscoreError, ValueError):
    """Invalid configuration or arguments that violate a precondition."""

    exit_code = 2


class InputError(OrdscoreError, ValueError):
    exit_code = 2


class UndefinedMetricError(OrdscoreError, ValueError):
    """A metric has no defined value on the given data (constant input, one class)."""

    exit_code = 3


class NumericError(OrdscoreError, ArithmeticError):
    exit_code = 3


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ResumeConflict(OrdscoreError):
    """An output directory holds stages produced by a different configuration."""

    exit_code = 4


class StageError(OrdscoreError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
