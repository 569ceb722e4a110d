"""Exception hierarchy shared by all identification modules."""


class SteerIdError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(SteerIdError, ValueError):
    pass


class DomainError(SteerIdError, ValueError):
    """Raised when a state leaves the region where the model is defined."""


class ExperimentFailure(SteerIdError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class UndefinedMetricError(SteerIdError, ValueError):
    pass


class IllConditionedError(SteerIdError):
    def __init__(self, message, condition_number=float("nan")):
        super().__init__(message)
        self.condition_number = condition_number


class OptimizationFailure(SteerIdError):
    def __init__(self, message, last_finite_loss=float("nan")):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class SimulationFailure(SteerIdError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RolloutFailure(SimulationFailure):
    pass


class TuningFailure(SteerIdError):
    pass


class ConfigError(SteerIdError):
    pass


class DataError(SteerIdError):
    pass
