"""Exception types raised across the package."""


class SplineDomainError(ValueError):
    """A parameter value lies outside the valid span of a spline."""


class IllConditionedError(ValueError):
    """A least-squares system is rank deficient."""


class InvalidStateError(RuntimeError):
    """An object was used before the step that makes it usable (e.g. calibration)."""


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class SamplingError(RuntimeError):
    pass


class StarvationError(RuntimeError):
    """The executor ran out of queued actions before the next chunk arrived."""

    def __init__(self, tick: int, message: str = ""):
        super().__init__(message or f"action queue underrun at tick {tick}")
        self.tick = tick
