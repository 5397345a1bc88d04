"""Exception types raised across the pipeline."""


class ScenePoseError(Exception):
    """Base class for all pipeline errors."""


class AllBehindCamera(ScenePoseError):
    """No vertex projects in front of the camera."""


class EmptySegment(ScenePoseError):
    """A segment or cloud has no usable points."""


class DegenerateSegment(ScenePoseError):
    """Segment has fewer than 4 non-collinear points."""


class NoCongruentSets(ScenePoseError):
    """Matching produced no congruent sets within the budget."""


class DimensionMismatch(ScenePoseError):
    """Depth images have different dimensions."""


class MaxDepth(ScenePoseError):
    """Attempted to expand a state that already places every object."""


class NoSupport(ScenePoseError):
    """Object settled outside the resting surface bounds."""

    def __init__(self, message, pose=None):
        super().__init__(message)
        self.pose = pose


class NoConfidentView(ScenePoseError):
    """Every view's detection confidence fell below the threshold."""


class EmptyAfterFilter(ScenePoseError):
    """Cloud cleaning removed every point."""


class EmptyHypotheses(ScenePoseError):
    """An object has no pose hypotheses to search over."""
