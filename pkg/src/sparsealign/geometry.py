"""SE(3) rigid transforms, twists, and pinhole camera projection.

Conventions used throughout the package:

Camera frame (right-handed, standard computer vision):
  - x right, y down, z forward (along the optical axis, into the scene).

Image frame:
  - u rightward, v downward, origin at the center of the top-left pixel.
  - Integer coordinates address pixel centers.

Twist ordering:
  - A twist is a 6-vector ``xi = (tx, ty, tz, wx, wy, wz)``: translation
    first (meters), rotation last (radians, axis-angle).

Pose semantics:
  - ``Se3Pose`` maps points: ``x_out = R @ x_in + t``.  A pose named
    ``T_ab`` maps coordinates in frame ``b`` to frame ``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi, BehindCamera, NonPositiveDepth

_SMALL_ANGLE = 1e-5
_PI_MARGIN = 1e-6

# Compositions tolerated before the rotation is re-projected onto SO(3).
_REORTHONORMALIZE_AFTER = 1000


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class Se3Pose:
    """Rigid transform: 3x3 rotation plus 3-vector translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray
    _compositions: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.linalg.norm(r.T @ r - np.eye(3)) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("pose contains non-finite values")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Se3Pose":
        return Se3Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        """Return self * other (apply ``other`` first)."""
        r = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        count = self._compositions + other._compositions + 1
        if count > _REORTHONORMALIZE_AFTER:
            u, _, vt = np.linalg.svd(r)
            r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
            count = 0
        return Se3Pose(r, t, count)

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        return self.compose(other)

    def inverse(self) -> "Se3Pose":
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation, self._compositions)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to one point (3,) or a batch (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 row-major matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "Se3Pose":
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise ValueError("last row of a rigid transform must be [0,0,0,1]")
        return Se3Pose(m[:3, :3], m[:3, 3])

    def to_list(self) -> list:
        """4x4 row-major nested list for JSON serialization."""
        return self.matrix().tolist()

    @staticmethod
    def from_list(rows: list) -> "Se3Pose":
        return Se3Pose.from_matrix(np.array(rows, dtype=np.float64))


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def at_level(self, level: int) -> "PinholeCamera":
        """Intrinsics for pyramid level ``level`` (all of fx,fy,cx,cy / 2^level)."""
        s = float(2**level)
        return PinholeCamera(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            self.width // 2**level,
            self.height // 2**level,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "PinholeCamera":
        return PinholeCamera(
            float(d["fx"]),
            float(d["fy"]),
            float(d["cx"]),
            float(d["cy"]),
            int(d["width"]),
            int(d["height"]),
        )


def se3_exp(xi: np.ndarray) -> Se3Pose:
    """Exponential map se(3) -> SE(3).

    ``xi`` is (tx, ty, tz, wx, wy, wz).  Closed form (Rodrigues plus the
    left Jacobian applied to the translational part) with a Taylor series
    below the small-angle threshold.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.isfinite(xi).all():
        raise ValueError("twist contains non-finite values")
    t, w = xi[:3], xi[3:]
    theta_sq = float(w @ w)
    theta = math.sqrt(theta_sq)
    k = _skew(w)
    k2 = k @ k
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta_sq / 6.0
        b = 0.5 - theta_sq / 24.0
        c = 1.0 / 6.0 - theta_sq / 120.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta_sq
        c = (theta - math.sin(theta)) / (theta_sq * theta)
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Se3Pose(rot, v @ t)


def se3_log(pose: Se3Pose) -> np.ndarray:
    """Logarithm map SE(3) -> se(3); inverse of :func:`se3_exp`.

    Raises :class:`AngleNearPi` when the rotation angle is within 1e-6 of
    pi, where the axis (and hence the twist) is not uniquely determined.
    """
    r = pose.rotation
    cos_theta = min(1.0, max(-1.0, (float(np.trace(r)) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta >= math.pi - _PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} is too close to pi")
    dev = np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )
    if theta < _SMALL_ANGLE:
        # dev = 2*sin(theta)*axis; theta/sin(theta) ~ 1 + theta^2/6
        w = 0.5 * dev * (1.0 + theta * theta / 6.0)
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        w = theta / (2.0 * math.sin(theta)) * dev
        half_cot = theta * math.cos(theta / 2.0) / (2.0 * math.sin(theta / 2.0))
        c = (1.0 - half_cot) / (theta * theta)
    k = _skew(w)
    v_inv = np.eye(3) - 0.5 * k + c * (k @ k)
    xi = np.empty(6)
    xi[:3] = v_inv @ pose.translation
    xi[3:] = w
    return xi


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians, range [0, pi]."""
    cos_theta = (float(np.trace(np.asarray(rotation))) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos_theta)))


def project(camera: PinholeCamera, point_cam: np.ndarray) -> np.ndarray:
    """Project camera-frame point(s) (..., 3) to pixel coordinates (..., 2)."""
    pts = np.asarray(point_cam, dtype=np.float64)
    z = pts[..., 2]
    if np.any(z <= 1e-9):
        raise BehindCamera("point depth must exceed 1e-9")
    uv = np.empty(pts.shape[:-1] + (2,))
    uv[..., 0] = camera.fx * pts[..., 0] / z + camera.cx
    uv[..., 1] = camera.fy * pts[..., 1] / z + camera.cy
    return uv


def backproject(
    camera: PinholeCamera, pixel: np.ndarray, inverse_depth
) -> np.ndarray:
    """Lift pixel(s) (..., 2) with inverse depth (1/m) to camera-frame points.

    ``inverse_depth`` broadcasts against the pixel batch shape.
    """
    px = np.asarray(pixel, dtype=np.float64)
    rho = np.asarray(inverse_depth, dtype=np.float64)
    if np.any(rho <= 0.0):
        raise NonPositiveDepth("inverse depth must be positive")
    z = 1.0 / rho
    pts = np.empty(np.broadcast_shapes(px.shape[:-1], rho.shape) + (3,))
    pts[..., 0] = (px[..., 0] - camera.cx) / camera.fx * z
    pts[..., 1] = (px[..., 1] - camera.cy) / camera.fy * z
    pts[..., 2] = z
    return pts


def warp_jacobian(camera: PinholeCamera, point_cam: np.ndarray) -> np.ndarray:
    """Jacobian of ``project(se3_exp(xi).transform(point))`` at xi = 0.

    Returns (2, 6) for a single point or (..., 2, 6) for a batch.  Columns
    follow the twist ordering (translation, then rotation).
    """
    pts = np.asarray(point_cam, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    if np.any(z <= 1e-9):
        raise BehindCamera("point depth must exceed 1e-9")
    inv_z = 1.0 / z
    fx_z = camera.fx * inv_z
    fy_z = camera.fy * inv_z
    xz = x * inv_z
    yz = y * inv_z
    jac = np.zeros(pts.shape[:-1] + (2, 6))
    # Translational block: dpi/dX.
    jac[..., 0, 0] = fx_z
    jac[..., 0, 2] = -fx_z * xz
    jac[..., 1, 1] = fy_z
    jac[..., 1, 2] = -fy_z * yz
    # Rotational block: dpi/dX @ (-skew(X)).
    jac[..., 0, 3] = -fx_z * xz * y
    jac[..., 0, 4] = camera.fx * (1.0 + xz * xz)
    jac[..., 0, 5] = -camera.fx * yz
    jac[..., 1, 3] = -camera.fy * (1.0 + yz * yz)
    jac[..., 1, 4] = fy_z * yz * x
    jac[..., 1, 5] = camera.fy * xz
    return jac
