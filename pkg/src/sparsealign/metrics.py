"""Pose and reprojection error metrics for the evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllOutOfBounds, NoValidDepth
from .geometry import PinholeCamera, Se3Pose, backproject, rotation_angle


@dataclass
class ErrorReport:
    """Stage-labelled error summary for one image pair.

    e_pixel: mean Euclidean pixel distance between estimated and
    ground-truth feature locations (px).  e_transl: translation distance
    (m).  e_rot: geodesic rotation angle (rad).  epe_3d: mean 3D
    end-point error over valid dense-depth pixels (m).
    """

    stage: str
    e_pixel: float
    e_transl: float
    e_rot: float
    epe_3d: float
    excluded_features: int = 0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "e_pixel": self.e_pixel,
            "e_transl": self.e_transl,
            "e_rot": self.e_rot,
            "epe_3d": self.epe_3d,
            "excluded_features": self.excluded_features,
        }


def _project_with_bounds(camera, points):
    """Pixels plus an in-front-and-inside validity mask."""
    z = points[:, 2]
    ok = z > 1e-9
    zs = np.where(ok, z, 1.0)
    u = camera.fx * points[:, 0] / zs + camera.cx
    v = camera.fy * points[:, 1] / zs + camera.cy
    ok &= (u >= 0) & (u <= camera.width - 1) & (v >= 0) & (v <= camera.height - 1)
    return np.column_stack([u, v]), ok


def pixel_errors(features, gt_pose: Se3Pose, est_pose: Se3Pose, camera: PinholeCamera):
    """Per-feature pixel distances plus the validity mask.

    A feature counts only when it projects in front of the camera and
    inside the image under both poses.
    """
    ref = np.array([[f.u, f.v] for f in features], dtype=np.float64)
    rho = np.array([f.inverse_depth for f in features])
    points = backproject(camera, ref, rho)
    uv_gt, ok_gt = _project_with_bounds(camera, gt_pose.transform(points))
    uv_est, ok_est = _project_with_bounds(camera, est_pose.transform(points))
    valid = ok_gt & ok_est
    dists = np.linalg.norm(uv_est - uv_gt, axis=1)
    return dists, valid


def pixel_error(features, gt_pose: Se3Pose, est_pose: Se3Pose, camera: PinholeCamera) -> float:
    """Mean pixel distance over features visible under both poses."""
    dists, valid = pixel_errors(features, gt_pose, est_pose, camera)
    if not valid.any():
        raise AllOutOfBounds("no feature projects inside the image under both poses")
    return float(dists[valid].mean())


def pose_error(gt: Se3Pose, est: Se3Pose):
    """(translation distance in meters, geodesic rotation angle in radians)."""
    e_transl = float(np.linalg.norm(est.translation - gt.translation))
    e_rot = rotation_angle(est.rotation @ gt.rotation.T)
    return e_transl, e_rot


def epe_3d(
    dense_depth0: np.ndarray,
    gt_pose: Se3Pose,
    est_pose: Se3Pose,
    camera: PinholeCamera,
) -> float:
    """Mean 3D end-point error over valid pixels of the dense depth map."""
    depth = np.asarray(dense_depth0, dtype=np.float64)
    ys, xs = np.nonzero(depth > 0)
    if len(ys) == 0:
        raise NoValidDepth("dense depth map has no valid pixels")
    pixels = np.column_stack([xs, ys]).astype(np.float64)
    points = backproject(camera, pixels, 1.0 / depth[ys, xs])
    diff = est_pose.transform(points) - gt_pose.transform(points)
    return float(np.linalg.norm(diff, axis=1).mean())
