"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from .geometry import PinholeCamera, Se3Pose
from .iclk import BORDER, SparseFeature


def as_gray_image(image, name: str = "image") -> np.ndarray:
    """Validate and return a float64 grayscale image in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        from .image import to_grayscale

        arr = to_grayscale(image)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D grayscale or (H, W, 3) RGB")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite intensities")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValueError(f"{name} intensities must be normalized to [0, 1]")
    return arr


def as_features(features, camera: PinholeCamera) -> list:
    """Validate features (or an (N, 3) array of u, v, inverse_depth rows).

    Enforces the patch-border invariant b <= u < W-b, b <= v < H-b with
    b = 17, and positive inverse depth.
    """
    if isinstance(features, np.ndarray):
        if features.ndim != 2 or features.shape[1] != 3:
            raise ValueError("feature array must have shape (N, 3)")
        features = [SparseFeature(*row) for row in features.astype(np.float64)]
    else:
        features = list(features)
    if not features:
        raise ValueError("no features given")
    b = BORDER
    for f in features:
        if not (b <= f.u < camera.width - b and b <= f.v < camera.height - b):
            raise ValueError(
                f"feature ({f.u}, {f.v}) violates the border invariant "
                f"[{b}, {camera.width - b}) x [{b}, {camera.height - b})"
            )
    return features


def as_pose(pose) -> Se3Pose:
    if isinstance(pose, Se3Pose):
        return pose
    arr = np.asarray(pose, dtype=np.float64)
    if arr.shape == (4, 4):
        return Se3Pose.from_matrix(arr)
    raise ValueError("pose must be an Se3Pose or a 4x4 matrix")


def as_camera(camera) -> PinholeCamera:
    if isinstance(camera, PinholeCamera):
        return camera
    if isinstance(camera, dict):
        return PinholeCamera.from_dict(camera)
    raise ValueError("camera must be a PinholeCamera or an intrinsics dict")


def check_camera_matches(camera: PinholeCamera, image: np.ndarray, name: str = "image"):
    if image.shape[0] != camera.height or image.shape[1] != camera.width:
        raise ValueError(
            f"{name} shape {image.shape[:2]} does not match camera "
            f"({camera.height}, {camera.width})"
        )


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
