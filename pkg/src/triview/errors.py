"""Exception hierarchy shared by all pipeline stages."""


class TriviewError(Exception):
    """Base class for every error raised by this package."""


class InvalidKernel(TriviewError, ValueError):
    pass


class InvalidThresholds(TriviewError, ValueError):
    pass


class DimMismatch(TriviewError, ValueError):
    pass


class OutOfBounds(TriviewError, ValueError):
    pass


class NoContour(TriviewError):
    pass


class NoClosedContour(TriviewError):
    pass


class UnknownConvention(TriviewError, ValueError):
    pass


class BehindCamera(TriviewError, ValueError):
    pass


class PoseConstructionFailed(TriviewError):
    pass


class EmptyHull(TriviewError):
    pass


class TooSmall(TriviewError, ValueError):
    pass


class CloudCollapsed(TriviewError):
    pass


class EmptyCloud(TriviewError, ValueError):
    pass


class DegenerateCloud(TriviewError, ValueError):
    pass


class RegistrationFailed(TriviewError):
    pass


class PlyError(TriviewError, ValueError):
    """Malformed PLY input; the message names the offending line."""


class ConfigError(TriviewError, ValueError):
    pass


class StageError(TriviewError):
    """A pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage, cause, hint=None):
        self.stage = stage
        self.cause = cause
        self.hint = hint
        msg = f"stage '{stage}' failed: {type(cause).__name__}: {cause}"
        if hint:
            msg += f" (hint: {hint})"
        super().__init__(msg)
