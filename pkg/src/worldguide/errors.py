"""Exception types shared across the toolkit."""


class WorldGuideError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(WorldGuideError):
    """Array shapes disagree (depth vs. intrinsics, frame sizes, ...)."""


class DegenerateDepth(WorldGuideError):
    """Monocular depth values are (near-)constant; scale/shift is unrecoverable."""


class InsufficientInliers(WorldGuideError):
    """Robust fit ended below the required inlier ratio."""


class FewerThan3Valid(WorldGuideError):
    """Fewer than three keypoints survived confidence/depth gating."""


class DegenerateConfiguration(WorldGuideError):
    """Weighted point set is collinear or too small; rotation is not unique."""


class AntiparallelGravity(WorldGuideError):
    """Gravity directions oppose each other; the correction axis is undefined."""


class NoValidDepth(WorldGuideError):
    """No valid depth samples inside the requested region."""


class ZeroLengthSpec(WorldGuideError):
    """Trajectory spec contains no segments."""


class DegenerateTrajectory(WorldGuideError):
    """Trajectory centers are collinear or coincident; alignment is ambiguous."""


class CodecError(WorldGuideError):
    """Malformed file content; message carries byte-offset diagnostics."""


class PipelineStageError(WorldGuideError):
    """A pipeline stage failed; carries a machine-readable report."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "error": type(self.cause).__name__,
            "message": str(self.cause),
        }
