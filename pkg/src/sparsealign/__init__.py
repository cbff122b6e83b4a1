"""Sparse-depth 6DoF image alignment with a synthetic terrain benchmark."""

from .errors import (
    AllInvalid,
    AllOutOfBounds,
    AngleNearPi,
    BehindCamera,
    CameraBelowTerrain,
    DegenerateGeometry,
    ImageTooSmall,
    InsufficientValidDepth,
    NoFeatures,
    NonPositiveDepth,
    NoValidDepth,
    OutOfBounds,
    RejectionBudgetExceeded,
    SingularSystem,
    SparseAlignError,
    TooFewCorrespondences,
)
from .geometry import (
    PinholeCamera,
    Se3Pose,
    backproject,
    project,
    rotation_angle,
    se3_exp,
    se3_log,
    warp_jacobian,
)
from .image import (
    ImagePyramid,
    build_pyramid,
    gradient,
    sample_bilinear,
    to_grayscale,
)
from .iclk import (
    AlignOptions,
    AlignmentResult,
    MaskedLevelData,
    RobustWeightConfig,
    SparseFeature,
    align,
    build_masks,
    compute_residuals,
    lm_step,
    precompute_template,
    robust_weights,
)
from .refine import (
    FeatureAlignOptions,
    FeatureCorrespondence,
    PoseOptOptions,
    RefinementResult,
    feature_align,
    optimize_pose,
    refine_structure,
)
from .synth import (
    HeightmapScene,
    JitterParams,
    PoseSamplingConstraints,
    RenderedView,
    generate_scene,
    jitter,
    make_dataset,
    render,
    sample_features,
    sample_pose_pair,
)
from .metrics import ErrorReport, epe_3d, pixel_error, pixel_errors, pose_error
from .benchmark import BenchmarkConfig, run_benchmark
from .estimator import SparsePoseAligner

__version__ = "0.1.0"

__all__ = [
    "AlignOptions",
    "AlignmentResult",
    "AllInvalid",
    "AllOutOfBounds",
    "AngleNearPi",
    "BehindCamera",
    "BenchmarkConfig",
    "CameraBelowTerrain",
    "DegenerateGeometry",
    "ErrorReport",
    "FeatureAlignOptions",
    "FeatureCorrespondence",
    "HeightmapScene",
    "ImagePyramid",
    "ImageTooSmall",
    "InsufficientValidDepth",
    "JitterParams",
    "MaskedLevelData",
    "NoFeatures",
    "NonPositiveDepth",
    "NoValidDepth",
    "OutOfBounds",
    "PinholeCamera",
    "PoseOptOptions",
    "PoseSamplingConstraints",
    "RefinementResult",
    "RejectionBudgetExceeded",
    "RenderedView",
    "RobustWeightConfig",
    "Se3Pose",
    "SingularSystem",
    "SparseAlignError",
    "SparseFeature",
    "SparsePoseAligner",
    "TooFewCorrespondences",
    "align",
    "backproject",
    "build_masks",
    "build_pyramid",
    "compute_residuals",
    "epe_3d",
    "feature_align",
    "generate_scene",
    "gradient",
    "jitter",
    "lm_step",
    "make_dataset",
    "optimize_pose",
    "pixel_error",
    "pixel_errors",
    "pose_error",
    "precompute_template",
    "project",
    "refine_structure",
    "render",
    "robust_weights",
    "rotation_angle",
    "run_benchmark",
    "sample_bilinear",
    "sample_features",
    "sample_pose_pair",
    "se3_exp",
    "se3_log",
    "to_grayscale",
    "warp_jacobian",
]
