"""Sparse 6DoF inverse-compositional Lucas-Kanade alignment.

Given a reference image with sparse features carrying inverse depth and a
target image, estimates the relative pose that photometrically aligns the
two over a 4-level pyramid.  Per level, binary masks select the 8x8 patch
around every feature, the patch Jacobian is precomputed once on the
reference image, and damped normal equations produce twist updates that
are composed inversely into the pose estimate.

Patch convention: an 8x8 patch around a feature covers pixel offsets
[-4, +3] in both axes relative to the feature position rounded to the
level grid.  Patches that would clip the image border are dropped from
that level only.  Where patches overlap, the nearer surface (larger
inverse depth) wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllInvalid, NoFeatures, NonPositiveDepth, SingularSystem
from .geometry import PinholeCamera, Se3Pose, backproject, se3_exp, warp_jacobian
from .image import ImagePyramid, _bilinear, gradient

PATCH = 8
PATCH_HALF = PATCH // 2
BORDER = 2 * PATCH + 1

_WEIGHT_KINDS = ("none", "huber", "tukey")


@dataclass(frozen=True)
class SparseFeature:
    """Pixel location in the level-0 reference image plus inverse depth (1/m)."""

    u: float
    v: float
    inverse_depth: float

    def __post_init__(self):
        if not self.inverse_depth > 0:
            raise NonPositiveDepth("feature inverse depth must be positive")


@dataclass
class MaskedLevelData:
    """Per-level mask, sparse inverse-depth grid, and precomputed template data.

    ``build_masks`` fills ``mask`` and ``inv_depth_grid``;
    ``precompute_template`` fills the remaining arrays, ordered by the
    row-major scan of the mask.
    """

    level: int
    mask: np.ndarray
    inv_depth_grid: np.ndarray
    pixel_coords: np.ndarray | None = None
    template_values: np.ndarray | None = None
    jacobian_rows: np.ndarray | None = None

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class RobustWeightConfig:
    """Residual down-weighting replacing a learned M-estimator."""

    kind: str = "huber"
    threshold: float = 0.1

    def __post_init__(self):
        if self.kind not in _WEIGHT_KINDS:
            raise ValueError(f"weight kind must be one of {_WEIGHT_KINDS}")
        if self.kind != "none" and not self.threshold > 0:
            raise ValueError("weight threshold must be positive")


@dataclass(frozen=True)
class AlignOptions:
    """Solver options.

    ``convergence_tol`` ends a level early once the update norm drops
    below it.  ``stall_tol`` classifies the run: the result counts as
    converged when the last update at the finest level is below it, which
    also covers exits through the cost-stall rule at the numerical noise
    floor of the photometric cost.
    """

    max_iterations: int = 10
    damping: float = 1e-6
    weight_config: RobustWeightConfig = field(default_factory=RobustWeightConfig)
    convergence_tol: float = 1e-8
    stall_tol: float = 1e-4

    @staticmethod
    def from_json_dict(d: dict) -> "AlignOptions":
        """Options from a JSON config block.

        Recognized keys: max_iterations, lambda, weight_kind,
        weight_threshold, convergence_tol.  Missing keys keep defaults.
        """
        defaults = AlignOptions()
        weights = RobustWeightConfig(
            kind=d.get("weight_kind", defaults.weight_config.kind),
            threshold=float(
                d.get("weight_threshold", defaults.weight_config.threshold)
            ),
        )
        return AlignOptions(
            max_iterations=int(d.get("max_iterations", defaults.max_iterations)),
            damping=float(d.get("lambda", defaults.damping)),
            weight_config=weights,
            convergence_tol=float(
                d.get("convergence_tol", defaults.convergence_tol)
            ),
            stall_tol=float(d.get("stall_tol", defaults.stall_tol)),
        )

    def to_json_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "lambda": self.damping,
            "weight_kind": self.weight_config.kind,
            "weight_threshold": self.weight_config.threshold,
            "convergence_tol": self.convergence_tol,
            "stall_tol": self.stall_tol,
        }


@dataclass
class AlignmentResult:
    """Estimated pose plus per-level solver diagnostics.

    ``iterations_per_level`` is indexed by pyramid level (0 = finest).
    ``residual_history`` holds one cost sequence per visited level in run
    order (coarsest first); each sequence starts with the cost at the
    level's initial pose.
    """

    pose: Se3Pose
    iterations_per_level: list
    final_cost: float
    converged: bool
    residual_history: list


def build_masks(features, level_dims) -> list:
    """Binary patch masks and sparse inverse-depth grids for every level.

    ``level_dims`` is a [(width, height)] list, level 0 first.  Feature
    positions scale to level k as round(p / 2^k) (half-up); patches that
    would clip the level bounds are dropped from that level.
    """
    features = list(features)
    if not features:
        raise NoFeatures("feature list is empty")
    out = []
    for level, (w, h) in enumerate(level_dims):
        mask = np.zeros((h, w), dtype=bool)
        grid = np.zeros((h, w))
        scale = float(2**level)
        for f in features:
            cu = int(math.floor(f.u / scale + 0.5))
            cv = int(math.floor(f.v / scale + 0.5))
            x0, y0 = cu - PATCH_HALF, cv - PATCH_HALF
            if x0 < 0 or y0 < 0 or x0 + PATCH > w or y0 + PATCH > h:
                continue
            mask[y0 : y0 + PATCH, x0 : x0 + PATCH] = True
            sub = grid[y0 : y0 + PATCH, x0 : x0 + PATCH]
            np.maximum(sub, f.inverse_depth, out=sub)
        out.append(MaskedLevelData(level=level, mask=mask, inv_depth_grid=grid))
    return out


def precompute_template(
    level_data: MaskedLevelData,
    i0_pyramid: ImagePyramid,
    camera: PinholeCamera,
) -> MaskedLevelData:
    """Fill template intensities and inverse-compositional Jacobian rows.

    For every masked pixel: row = grad(I0) @ warp_jacobian evaluated at the
    backprojected point, using intrinsics scaled to the level.  Rows are
    computed once and reused by every iteration of the level.
    """
    img = i0_pyramid.levels[level_data.level]
    cam = camera.at_level(level_data.level)
    ys, xs = np.nonzero(level_data.mask)
    coords = np.column_stack([xs, ys]).astype(np.float64)
    if len(coords) == 0:
        return replace(
            level_data,
            pixel_coords=coords,
            template_values=np.zeros(0),
            jacobian_rows=np.zeros((0, 6)),
        )
    rho = level_data.inv_depth_grid[ys, xs]
    if np.any(rho <= 0):
        raise NonPositiveDepth("masked pixel without positive inverse depth")
    dx, dy = gradient(img)
    points = backproject(cam, coords, rho)
    jw = warp_jacobian(cam, points)
    rows = dx[ys, xs][:, None] * jw[:, 0, :] + dy[ys, xs][:, None] * jw[:, 1, :]
    return replace(
        level_data,
        pixel_coords=coords,
        template_values=img[ys, xs].copy(),
        jacobian_rows=rows,
    )


def compute_residuals(
    level_data: MaskedLevelData,
    i1_level: np.ndarray,
    camera_level: PinholeCamera,
    pose: Se3Pose,
):
    """Masked photometric residuals r = I1(project(pose @ X)) - I0(p).

    Returns (residuals, valid).  Pixels that land behind the camera or
    outside the target image get valid=False and residual 0; they are
    excluded from the normal equations.  Raises :class:`AllInvalid` when
    nothing projects inside.
    """
    coords = level_data.pixel_coords
    xs = coords[:, 0].astype(np.int64)
    ys = coords[:, 1].astype(np.int64)
    rho = level_data.inv_depth_grid[ys, xs]
    points = backproject(camera_level, coords, rho)
    warped = pose.transform(points)
    z = warped[:, 2]
    valid = z > 1e-9
    zsafe = np.where(valid, z, 1.0)
    u = camera_level.fx * warped[:, 0] / zsafe + camera_level.cx
    v = camera_level.fy * warped[:, 1] / zsafe + camera_level.cy
    h, w = i1_level.shape
    valid &= (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    if not valid.any():
        raise AllInvalid("no masked pixel projects into the target image")
    residuals = np.zeros(len(coords))
    residuals[valid] = (
        _bilinear(i1_level, u[valid], v[valid])
        - level_data.template_values[valid]
    )
    return residuals, valid


def robust_weights(residuals: np.ndarray, config: RobustWeightConfig) -> np.ndarray:
    """Per-residual diagonal weights for the chosen robust kernel."""
    r = np.asarray(residuals, dtype=np.float64)
    if config.kind == "none":
        return np.ones_like(r)
    t = config.threshold
    a = np.abs(r)
    if config.kind == "huber":
        return np.minimum(1.0, t / np.maximum(a, 1e-300))
    s = np.where(a < t, 1.0 - (r / t) ** 2, 0.0)
    return s * s


def lm_step(
    jacobian_rows: np.ndarray,
    residuals: np.ndarray,
    weights: np.ndarray,
    damping: float,
) -> np.ndarray:
    """Solve the damped normal equations for one twist update.

    delta = (J^T W J + lambda * D)^-1 J^T W r with D = diag(J^T W J).
    The caller composes pose <- pose @ se3_exp(delta)^-1.
    """
    wj = weights[:, None] * jacobian_rows
    a = jacobian_rows.T @ wj
    b = jacobian_rows.T @ (weights * residuals)
    m = a + damping * np.diag(np.diag(a))
    if not np.isfinite(m).all() or np.linalg.cond(m) > 1e12:
        raise SingularSystem("damped normal equations are ill-conditioned")
    return np.linalg.solve(m, b)


def _weighted_cost(residuals, valid, config) -> float:
    w = robust_weights(residuals[valid], config)
    return float(np.mean(w * residuals[valid] ** 2))


def align(
    i0_pyramid: ImagePyramid,
    i1_pyramid: ImagePyramid,
    features,
    camera: PinholeCamera,
    initial_pose: Se3Pose,
    options: AlignOptions | None = None,
) -> AlignmentResult:
    """Coarse-to-fine sparse inverse-compositional alignment.

    Runs level 3 down to level 0.  Each level performs up to
    ``max_iterations`` damped updates, stopping early once the update norm
    drops below ``convergence_tol`` or the weighted cost increases twice
    in a row (the best pose seen in the level is kept either way).

    The ``converged`` flag reports whether the finest level came to rest:
    its last update norm fell below ``options.stall_tol``.
    """
    options = options or AlignOptions()
    level_datas = build_masks(features, i0_pyramid.level_dims)
    pose = initial_pose
    iterations = [0, 0, 0, 0]
    history = []
    final_cost = math.nan
    converged = False
    for level in range(3, -1, -1):
        data = precompute_template(level_datas[level], i0_pyramid, camera)
        if data.count == 0:
            history.append([])
            continue
        cam_level = camera.at_level(level)
        i1_level = i1_pyramid.levels[level]

        residuals, valid = compute_residuals(data, i1_level, cam_level, pose)
        cost = _weighted_cost(residuals, valid, options.weight_config)
        level_history = [cost]
        best_pose, best_cost = pose, cost
        prev_cost = cost
        consecutive_increases = 0
        last_step = math.inf
        for it in range(1, options.max_iterations + 1):
            w = robust_weights(residuals[valid], options.weight_config)
            try:
                delta = lm_step(
                    data.jacobian_rows[valid], residuals[valid], w, options.damping
                )
            except SingularSystem as err:
                raise SingularSystem(str(err), best_pose=best_pose) from None
            pose = pose.compose(se3_exp(delta).inverse())
            iterations[level] = it
            residuals, valid = compute_residuals(data, i1_level, cam_level, pose)
            cost = _weighted_cost(residuals, valid, options.weight_config)
            level_history.append(cost)
            if cost < best_cost:
                best_pose, best_cost = pose, cost
            consecutive_increases = consecutive_increases + 1 if cost > prev_cost else 0
            prev_cost = cost
            last_step = float(np.linalg.norm(delta))
            if last_step < options.convergence_tol:
                break
            if consecutive_increases >= 2:
                break
        pose = best_pose
        final_cost = best_cost
        history.append(level_history)
        if level == 0:
            converged = last_step < options.stall_tol
    return AlignmentResult(
        pose=pose,
        iterations_per_level=iterations,
        final_cost=final_cost,
        converged=converged,
        residual_history=history,
    )
