"""Exception hierarchy.

Each class carries the CLI exit code it maps to: 2 for input/validation
problems, 3 for numerical failures.
"""


class TorusOTError(Exception):
    exit_code = 3


class ValidationError(TorusOTError):
    exit_code = 2


class InvalidPoint(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class CostTooLarge(ValidationError):
    pass


class TimeOutOfRange(ValidationError):
    pass


class InvalidPath(ValidationError):
    pass


class InvalidMeasure(ValidationError):
    pass


class PreconditionViolated(ValidationError):
    pass


class NumericalError(TorusOTError):
    exit_code = 3


class OptimizationFailed(NumericalError):
    def __init__(self, message: str, best_value: float, residual: float):
        super().__init__(f"{message} (best value {best_value!r}, residual {residual!r})")
        self.best_value = best_value
        self.residual = residual


class EmptyReversibilitySet(NumericalError):
    pass


class IntegrationFailed(NumericalError):
    pass


class DegenerateFamily(NumericalError):
    pass
