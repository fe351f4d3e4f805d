class LabError(Exception):
    """Root of every error raised by the laboratory."""


class NonConvergent(LabError):
    """An iterative solve did not reach its tolerance."""


class Unstable(LabError, ValueError):
    """A matrix required to be Schur stable has spectral radius >= 1."""


class Diverged(LabError):
    """A rollout crossed the overflow guard; ``trajectory`` holds the steps up to the crossing."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class Degenerate(LabError, ValueError):
    """Regression data does not excite every direction."""


class MissingTruth(LabError, ValueError):
    """An error policy needs the true system and none was given."""


class Unstabilizable(LabError):
    """No stabilizing LQR gain exists for the given pair."""


class NoStabilizablePoint(LabError):
    """No candidate model in a confidence set could be stabilized."""


class SynthesisInfeasible(LabError):
    """The robust synthesis program admits no solution on the gamma grid."""


class ConfigError(LabError, ValueError):
    """Invalid experiment or synthesis configuration."""
