"""Post-alignment refinement: subpixel features, robust pose, depth updates.

The pose solver output predicts where each reference feature lands in the
target image.  ``feature_align`` sharpens those predictions with a 2D
translational inverse-compositional patch alignment; ``optimize_pose``
then re-estimates the pose from the refined correspondences with a Cauchy
robust loss and adaptive Levenberg-Marquardt damping; ``refine_structure``
optionally updates each feature's inverse depth along its ray with the
pose held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, TooFewCorrespondences
from .geometry import PinholeCamera, Se3Pose, backproject, se3_exp, warp_jacobian
from .iclk import PATCH, PATCH_HALF
from .image import _bilinear, gradient


@dataclass
class FeatureCorrespondence:
    """A reference feature and its (subpixel) location in the target image."""

    ref_pixel: np.ndarray
    target_pixel: np.ndarray
    inverse_depth: float
    alignment_converged: bool


@dataclass
class RefinementResult:
    pose: Se3Pose
    inlier_count: int
    mean_reprojection_error: float
    per_feature_errors: np.ndarray


@dataclass(frozen=True)
class FeatureAlignOptions:
    patch: int = PATCH
    max_iters: int = 30
    tol: float = 0.01  # pixels


@dataclass(frozen=True)
class PoseOptOptions:
    loss: str = "cauchy"
    cauchy_scale: float = 1.0  # pixels
    max_iters: int = 50

    def __post_init__(self):
        if self.loss not in ("cauchy", "none"):
            raise ValueError("loss must be 'cauchy' or 'none'")
        if not self.cauchy_scale > 0:
            raise ValueError("cauchy scale must be positive")


def feature_align(
    i0: np.ndarray,
    i1: np.ndarray,
    features,
    camera: PinholeCamera,
    pose: Se3Pose,
    options: FeatureAlignOptions | None = None,
) -> list:
    """Refine predicted target locations by translational patch alignment.

    Each feature's prediction project(pose @ backproject(feature)) seeds an
    inverse-compositional 2D alignment of its reference patch against the
    target image; iteration stops once the update norm drops below ``tol``.
    Features that leave the image or fail to converge keep their last
    estimate and are flagged ``alignment_converged=False``.
    """
    options = options or FeatureAlignOptions()
    half = options.patch // 2
    du, dv = np.meshgrid(
        np.arange(-half, options.patch - half, dtype=np.float64),
        np.arange(-half, options.patch - half, dtype=np.float64),
    )
    du = du.ravel()
    dv = dv.ravel()
    gx0, gy0 = gradient(i0)
    h, w = i1.shape

    out = []
    for f in features:
        point = backproject(camera, np.array([f.u, f.v]), f.inverse_depth)
        warped = pose.transform(point)
        ref = np.array([f.u, f.v])
        if warped[2] <= 1e-9:
            out.append(FeatureCorrespondence(ref, ref.copy(), f.inverse_depth, False))
            continue
        pred = np.array(
            [
                camera.fx * warped[0] / warped[2] + camera.cx,
                camera.fy * warped[1] / warped[2] + camera.cy,
            ]
        )

        tu = f.u + du
        tv = f.v + dv
        if (
            tu.min() < 0
            or tu.max() > i0.shape[1] - 1
            or tv.min() < 0
            or tv.max() > i0.shape[0] - 1
        ):
            out.append(FeatureCorrespondence(ref, pred, f.inverse_depth, False))
            continue
        template = _bilinear(i0, tu, tv)
        jx = _bilinear(gx0, tu, tv)
        jy = _bilinear(gy0, tu, tv)
        hess = np.array(
            [
                [np.dot(jx, jx), np.dot(jx, jy)],
                [np.dot(jx, jy), np.dot(jy, jy)],
            ]
        )
        if np.linalg.cond(hess) > 1e12:
            out.append(FeatureCorrespondence(ref, pred, f.inverse_depth, False))
            continue
        hess_inv = np.linalg.inv(hess)

        shift = np.zeros(2)
        converged = False
        in_bounds = True
        for _ in range(options.max_iters):
            su = pred[0] + shift[0] + du
            sv = pred[1] + shift[1] + dv
            if su.min() < 0 or su.max() > w - 1 or sv.min() < 0 or sv.max() > h - 1:
                in_bounds = False
                break
            residual = _bilinear(i1, su, sv) - template
            b = np.array([np.dot(jx, residual), np.dot(jy, residual)])
            delta = hess_inv @ b
            shift -= delta
            if float(np.hypot(delta[0], delta[1])) < options.tol:
                converged = True
                break
        out.append(
            FeatureCorrespondence(
                ref, pred + shift, f.inverse_depth, converged and in_bounds
            )
        )
    return out


def _cauchy_weights(errors_sq: np.ndarray, scale: float) -> np.ndarray:
    return 1.0 / (1.0 + errors_sq / (scale * scale))


def _reprojection(correspondences, camera, pose):
    """Residual vector (2n,), stacked Jacobian (2n, 6), per-point errors (n,)."""
    ref = np.array([c.ref_pixel for c in correspondences])
    tgt = np.array([c.target_pixel for c in correspondences])
    rho = np.array([c.inverse_depth for c in correspondences])
    points = backproject(camera, ref, rho)
    warped = pose.transform(points)
    if np.any(warped[:, 2] <= 1e-9):
        raise DegenerateGeometry("correspondence transforms behind the camera")
    pred = np.column_stack(
        [
            camera.fx * warped[:, 0] / warped[:, 2] + camera.cx,
            camera.fy * warped[:, 1] / warped[:, 2] + camera.cy,
        ]
    )
    residual = pred - tgt
    jac = warp_jacobian(camera, warped)
    return residual, jac, np.linalg.norm(residual, axis=1)


def _robust_cost(errors: np.ndarray, options: PoseOptOptions) -> float:
    if options.loss == "none":
        return float(np.sum(errors**2))
    c2 = options.cauchy_scale**2
    return float(np.sum(0.5 * c2 * np.log1p(errors**2 / c2)))


def optimize_pose(
    correspondences,
    camera: PinholeCamera,
    initial_pose: Se3Pose,
    options: PoseOptOptions | None = None,
) -> RefinementResult:
    """Robust reprojection-error pose refinement on SE(3).

    Levenberg-Marquardt with multiplicative damping adaptation (x10 on a
    rejected step, /10 on an accepted one) and Cauchy reweighting.  Only
    correspondences flagged converged participate.
    """
    options = options or PoseOptOptions()
    active = [c for c in correspondences if c.alignment_converged]
    if len(active) < 3:
        raise TooFewCorrespondences(
            f"{len(active)} converged correspondences, need at least 3"
        )

    pose = initial_pose
    residual, jac, errors = _reprojection(active, camera, pose)
    cost = _robust_cost(errors, options)
    damping = 1e-4
    for _ in range(options.max_iters):
        if options.loss == "cauchy":
            weights = _cauchy_weights(errors**2, options.cauchy_scale)
        else:
            weights = np.ones(len(active))
        w2 = np.repeat(weights, 2)
        jr = jac.reshape(-1, 6)
        a = jr.T @ (w2[:, None] * jr)
        g = jr.T @ (w2 * residual.ravel())
        if np.linalg.cond(a) > 1e12:
            raise DegenerateGeometry("normal equations are rank deficient")
        m = a + damping * np.diag(np.diag(a))
        delta = np.linalg.solve(m, -g)
        candidate = se3_exp(delta).compose(pose)
        try:
            cand_res, cand_jac, cand_err = _reprojection(active, camera, candidate)
            cand_cost = _robust_cost(cand_err, options)
        except DegenerateGeometry:
            cand_cost = math.inf
        if cand_cost < cost:
            pose = candidate
            residual, jac, errors = cand_res, cand_jac, cand_err
            cost = cand_cost
            damping = max(damping / 10.0, 1e-12)
            if float(np.linalg.norm(delta)) < 1e-12:
                break
        else:
            damping *= 10.0
            if damping > 1e10:
                break

    inliers = int(np.sum(errors <= 3.0 * options.cauchy_scale))
    return RefinementResult(
        pose=pose,
        inlier_count=inliers,
        mean_reprojection_error=float(errors.mean()),
        per_feature_errors=errors,
    )


def refine_structure(correspondences, camera: PinholeCamera, pose: Se3Pose):
    """Per-feature inverse-depth update along the ray, pose fixed.

    One-dimensional Gauss-Newton on the reprojection error.  Updates that
    would make the inverse depth non-positive, or rays with no parallax
    (reprojection insensitive to depth), are rejected and flagged.

    Returns (inverse_depths, refined) arrays aligned with the input order.
    """
    n = len(correspondences)
    rhos = np.array([c.inverse_depth for c in correspondences])
    refined = np.zeros(n, dtype=bool)
    for i, c in enumerate(correspondences):
        rho = float(c.inverse_depth)
        ok = True
        for _ in range(10):
            point = backproject(camera, np.asarray(c.ref_pixel, dtype=float), rho)
            warped = pose.transform(point)
            if warped[2] <= 1e-9:
                ok = False
                break
            pred = np.array(
                [
                    camera.fx * warped[0] / warped[2] + camera.cx,
                    camera.fy * warped[1] / warped[2] + camera.cy,
                ]
            )
            residual = pred - np.asarray(c.target_pixel, dtype=float)
            # d(warped)/d(rho) = R @ dX/drho with X = n/rho => dX/drho = -X/rho.
            dwarp = pose.rotation @ (-point / rho)
            z = warped[2]
            jac = np.array(
                [
                    camera.fx * (dwarp[0] * z - warped[0] * dwarp[2]) / z**2,
                    camera.fy * (dwarp[1] * z - warped[1] * dwarp[2]) / z**2,
                ]
            )
            jtj = float(jac @ jac)
            if jtj < 1e-12:
                ok = False  # no parallax: depth unobservable
                break
            delta = -float(jac @ residual) / jtj
            if rho + delta <= 0.0:
                ok = False
                break
            rho += delta
            if abs(delta) < 1e-12 * max(rho, 1.0):
                break
        if ok:
            rhos[i] = rho
            refined[i] = True
    return rhos, refined
