class Scene123Error(Exception):
    """Base class for all library errors."""


class DomainError(Scene123Error, ValueError):
    """An argument lies outside the operation's domain."""


class BehindCameraError(DomainError):
    """A point cannot be projected because it is not in front of the camera."""


class DataError(Scene123Error, ValueError):
    """Input data is empty or unusable (no valid pixels, empty masks, ...)."""


class DegenerateError(DataError):
    """Every sample was rejected as numerically degenerate."""


class StateError(Scene123Error, RuntimeError):
    """An object is missing state required by the requested operation."""


class OptimizationError(Scene123Error, RuntimeError):
    """An optimization produced a non-finite or diverging objective."""


class ConfigError(Scene123Error, ValueError):
    """A configuration value is missing, malformed or out of range."""


class StageError(Scene123Error, RuntimeError):
    """A pipeline stage failed; ``report`` holds whatever was measured so far."""

    def __init__(self, stage: str, cause: Exception, report=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.report = report
