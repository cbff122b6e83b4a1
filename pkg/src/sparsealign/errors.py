"""Exception hierarchy shared by all sparsealign modules."""


class SparseAlignError(Exception):
    """Base class for all errors raised by this package."""


class AngleNearPi(SparseAlignError):
    """Rotation angle is within tolerance of pi; the log map branch is ambiguous."""


class BehindCamera(SparseAlignError):
    """Point has non-positive depth along the optical axis."""


class NonPositiveDepth(SparseAlignError):
    """Inverse depth (or depth) must be strictly positive."""


class ImageTooSmall(SparseAlignError):
    """Image dimensions below the minimum required by the operation."""


class OutOfBounds(SparseAlignError):
    """Sample coordinates fall outside the image."""


class NoFeatures(SparseAlignError):
    """An empty feature list was supplied."""


class AllInvalid(SparseAlignError):
    """No masked pixel projects into the target image; the solve diverged."""


class SingularSystem(SparseAlignError):
    """Damped normal equations are numerically singular.

    When propagated out of :func:`sparsealign.iclk.align`, carries the best
    pose found so far in the ``best_pose`` attribute.
    """

    def __init__(self, message: str, best_pose=None):
        super().__init__(message)
        self.best_pose = best_pose


class DegenerateGeometry(SparseAlignError):
    """Correspondence geometry leaves the pose unobservable."""


class TooFewCorrespondences(SparseAlignError):
    """Fewer converged correspondences than the solver needs."""


class CameraBelowTerrain(SparseAlignError):
    """Render requested from a viewpoint at or below the height surface."""


class RejectionBudgetExceeded(SparseAlignError):
    """Pose-pair rejection sampling exhausted its attempt budget."""


class InsufficientValidDepth(SparseAlignError):
    """Depth image has fewer valid pixels than requested features."""


class NoValidDepth(SparseAlignError):
    """Dense depth image contains no valid (positive) pixels."""


class AllOutOfBounds(SparseAlignError):
    """Every feature projects outside the image under one of the poses."""
