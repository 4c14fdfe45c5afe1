"""Exception types raised across the package.

Every error that callers are expected to handle derives from Hyperlapse360Error
so CLI code can map the whole family to a single exit code.
"""


class Hyperlapse360Error(Exception):
    pass


# geometry
class NonUnitVector(Hyperlapse360Error):
    pass


class OutOfBounds(Hyperlapse360Error):
    pass


class AllWeightsZero(Hyperlapse360Error):
    pass


# tracking / motion models
class EmptyMatches(Hyperlapse360Error):
    pass


class TooFewMatches(Hyperlapse360Error):
    pass


class Degenerate(Hyperlapse360Error):
    """Model fit has no unique solution (collinear/coincident points)."""


class NoConsensus(Hyperlapse360Error):
    """RANSAC (or vote accumulation) found no dominant hypothesis."""


# 360 stabilization
class DegenerateConfiguration(Hyperlapse360Error):
    """Absolute-orientation input does not pin down a unique rotation."""


class InsufficientTracks(Hyperlapse360Error):
    def __init__(self, frame: int, message: str | None = None):
        self.frame = frame
        super().__init__(message or f"fewer than 3 track pairs span frames {frame}..{frame + 1}")


class LengthMismatch(Hyperlapse360Error):
    pass


class DimensionMismatch(Hyperlapse360Error):
    pass


# focus of expansion
class FlowTooSmall(Hyperlapse360Error):
    pass


class DegenerateFlow(Hyperlapse360Error):
    """Flow endpoint is (anti)parallel to the start: great circle undefined."""


class AllMissing(Hyperlapse360Error):
    pass


# content analysis
class EmptyRegion(Hyperlapse360Error):
    pass


class EmptyMask(Hyperlapse360Error):
    pass


class MissingFrames(Hyperlapse360Error):
    pass


# view planning
class ConvergenceFailure(Hyperlapse360Error):
    pass


class CgDivergence(Hyperlapse360Error):
    pass


# frame selection
class InfeasibleWindow(Hyperlapse360Error):
    pass


# 2d stabilization / rendering
class SingularModel(Hyperlapse360Error):
    pass


class SingularPose(Hyperlapse360Error):
    pass


class SingularTransform(Hyperlapse360Error):
    pass


class InvalidFov(Hyperlapse360Error):
    pass


# file formats
class BadFileFormat(Hyperlapse360Error):
    pass


# pipeline
class StageFailure(Hyperlapse360Error):
    """A pipeline stage failed; carries the stage name for error reporting."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {cause}")


# reporting
class IncompleteRun(Hyperlapse360Error):
    pass
