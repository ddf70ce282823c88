"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class DegenerateTranslationError(ValueError):
    """Translation too short to normalise (e.g. the vehicle is stopped)."""


class NonFiniteGradientError(FloatingPointError):
    """Raised by an optimizer step; the caller should abort the iteration."""


class InvalidPoseError(ValueError):
    """Camera placed inside scene geometry."""


class StageDivergedError(RuntimeError):
    def __init__(self, stage, trace, message=None):
        self.stage = stage
        self.trace = list(trace)
        super().__init__(message or f"stage {stage} diverged after {len(self.trace)} steps")
