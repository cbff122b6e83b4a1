"""Core solver tests: masks, template precompute, residuals, LM, align.

Oracles:
  - mask construction against an explicit rectangle-union loop;
  - template Jacobian rows against a symbolic single-pixel product and
    against finite differences of the residuals in the twist;
  - lm_step against an independent QR least-squares solve;
  - align against renderer ground truth.
"""

import math

import numpy as np
import pytest

from sparsealign.errors import AllInvalid, NoFeatures, SingularSystem
from sparsealign.geometry import PinholeCamera, Se3Pose, backproject, se3_exp, warp_jacobian
from sparsealign.iclk import (
    AlignOptions,
    RobustWeightConfig,
    SparseFeature,
    align,
    build_masks,
    compute_residuals,
    lm_step,
    precompute_template,
    robust_weights,
)
from sparsealign.image import build_pyramid, gradient, sample_bilinear
from sparsealign.metrics import pixel_error, pose_error

CAM = PinholeCamera(180.0, 180.0, 94.0, 60.0, 188, 120)
DIMS = [(188, 120), (94, 60), (47, 30), (23, 15)]


def brute_force_mask(features, width, height, level):
    """Rectangle-union oracle with nearer-depth conflict resolution."""
    scale = 2**level
    grid = {}
    for f in features:
        cu = int(math.floor(f.u / scale + 0.5))
        cv = int(math.floor(f.v / scale + 0.5))
        if cu - 4 < 0 or cv - 4 < 0 or cu + 4 > width or cv + 4 > height:
            continue
        for dy in range(-4, 4):
            for dx in range(-4, 4):
                key = (cu + dx, cv + dy)
                grid[key] = max(grid.get(key, 0.0), f.inverse_depth)
    return grid


class TestBuildMasks:
    def test_single_feature_64_pixels(self):
        feats = [SparseFeature(100.0, 100.0, 0.5)]
        data = build_masks(feats, [(752, 480)])
        assert data[0].count == 64
        ys, xs = np.nonzero(data[0].mask)
        assert xs.min() == 96 and xs.max() == 103
        assert ys.min() == 96 and ys.max() == 103

    def test_fifty_disjoint_features(self):
        feats = [
            SparseFeature(20.0 + 10 * (i % 30), 20.0 + 10 * (i // 30), 1.0)
            for i in range(50)
        ]
        data = build_masks(feats, [(752, 480)])
        assert data[0].count == 50 * 64

    def test_overlapping_pair_matches_union_oracle(self):
        feats = [SparseFeature(60.0, 60.0, 0.5), SparseFeature(64.0, 60.0, 0.8)]
        data = build_masks(feats, [(188, 120)])
        oracle = brute_force_mask(feats, 188, 120, 0)
        assert data[0].count == len(oracle) < 128
        for (x, y), rho in oracle.items():
            assert data[0].mask[y, x]
            assert data[0].inv_depth_grid[y, x] == rho

    def test_nearer_depth_wins_in_overlap(self):
        feats = [SparseFeature(60.0, 60.0, 0.5), SparseFeature(62.0, 60.0, 0.9)]
        data = build_masks(feats, [(188, 120)])
        # Overlap columns carry the larger inverse depth (nearer surface).
        assert data[0].inv_depth_grid[60, 60] == 0.9

    def test_random_sets_match_oracle_all_levels(self):
        rng = np.random.default_rng(17)
        feats = [
            SparseFeature(
                float(rng.integers(17, 171)),
                float(rng.integers(17, 103)),
                float(rng.uniform(0.01, 0.1)),
            )
            for _ in range(40)
        ]
        data = build_masks(feats, DIMS)
        for level, (w, h) in enumerate(DIMS):
            oracle = brute_force_mask(feats, w, h, level)
            assert data[level].count == len(oracle)
            for (x, y), rho in oracle.items():
                assert data[level].mask[y, x]
                assert data[level].inv_depth_grid[y, x] == pytest.approx(rho)

    def test_border_feature_dropped_at_coarse_level(self):
        feats = [SparseFeature(17.0, 17.0, 0.5)]
        data = build_masks(feats, DIMS)
        assert data[0].count == 64
        assert data[3].count == 0  # rounds to (2, 2) at level 3, patch clips

    def test_empty_features_raise(self):
        with pytest.raises(NoFeatures):
            build_masks([], DIMS)


class TestPrecomputeTemplate:
    def test_constant_image_zero_rows(self):
        pyr = build_pyramid(np.full((120, 188), 0.5))
        feats = [SparseFeature(90.0, 60.0, 0.02)]
        data = build_masks(feats, pyr.level_dims)
        done = precompute_template(data[0], pyr, CAM)
        np.testing.assert_allclose(done.jacobian_rows, 0.0)
        np.testing.assert_allclose(done.template_values, 0.5)

    def test_single_pixel_symbolic_oracle(self):
        # Ramp image: I(u, v) = a*u + b*v; grad = (a, b) everywhere interior.
        a, b = 1.0 / 400.0, 1.0 / 900.0
        u_grid, v_grid = np.meshgrid(np.arange(188.0), np.arange(120.0))
        img = a * u_grid + b * v_grid
        pyr = build_pyramid(img)
        f = SparseFeature(90.0, 60.0, 0.02)
        data = build_masks([f], pyr.level_dims)
        done = precompute_template(data[0], pyr, CAM)
        idx = np.flatnonzero(
            (done.pixel_coords[:, 0] == 90) & (done.pixel_coords[:, 1] == 60)
        )[0]
        point = backproject(CAM, np.array([90.0, 60.0]), 0.02)
        expected = a * warp_jacobian(CAM, point)[0] + b * warp_jacobian(CAM, point)[1]
        np.testing.assert_allclose(done.jacobian_rows[idx], expected, rtol=1e-9)

    def test_rows_match_residual_finite_differences(self, rendered_pyramids, rendered_pair):
        # With target == reference, d residual / d xi at identity equals the
        # precomputed row; central differences over the bilinear warp agree
        # with the central-difference image gradient.
        pyr0, _ = rendered_pyramids
        _, _, features, _ = rendered_pair
        data = build_masks(features, pyr0.level_dims)
        done = precompute_template(data[0], pyr0, CAM)
        step = 1e-5
        fd = np.zeros_like(done.jacobian_rows)
        for j in range(6):
            xi = np.zeros(6)
            xi[j] = step
            hi, _ = compute_residuals(done, pyr0.levels[0], CAM, se3_exp(xi))
            lo, _ = compute_residuals(done, pyr0.levels[0], CAM, se3_exp(-xi))
            fd[:, j] = (hi - lo) / (2.0 * step)
        scale = np.abs(fd).max()
        assert np.abs(done.jacobian_rows - fd).max() / scale < 1e-3


class TestComputeResiduals:
    def test_identity_same_image_zero(self, rendered_pyramids, rendered_pair):
        pyr0, _ = rendered_pyramids
        _, _, features, _ = rendered_pair
        data = build_masks(features, pyr0.level_dims)
        done = precompute_template(data[0], pyr0, CAM)
        res, valid = compute_residuals(done, pyr0.levels[0], CAM, Se3Pose.identity())
        assert valid.all()
        np.testing.assert_allclose(res, 0.0, atol=1e-13)

    def test_ground_truth_pose_small_residuals(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        data = build_masks(features, pyr0.level_dims)
        done = precompute_template(data[0], pyr0, CAM)
        res, valid = compute_residuals(done, pyr1.levels[0], CAM, gt)
        rms = float(np.sqrt(np.mean(res[valid] ** 2)))
        assert rms < 0.02

    def test_behind_camera_all_invalid(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, _ = rendered_pair
        data = build_masks(features, pyr0.level_dims)
        done = precompute_template(data[0], pyr0, CAM)
        flipped = Se3Pose(np.eye(3), np.array([0.0, 0.0, -1e5]))
        with pytest.raises(AllInvalid):
            compute_residuals(done, pyr1.levels[0], CAM, flipped)


class TestRobustWeights:
    def test_none_gives_ones(self):
        r = np.array([-5.0, 0.0, 0.3])
        np.testing.assert_allclose(
            robust_weights(r, RobustWeightConfig("none", 1.0)), 1.0
        )

    def test_huber_definition(self):
        w = robust_weights(np.array([0.2]), RobustWeightConfig("huber", 0.1))
        assert w[0] == pytest.approx(0.5)
        w = robust_weights(np.array([0.05, 0.0]), RobustWeightConfig("huber", 0.1))
        np.testing.assert_allclose(w, 1.0)

    def test_tukey_redescends_to_zero(self):
        cfg = RobustWeightConfig("tukey", 0.1)
        w = robust_weights(np.array([0.1, 0.2, 0.0, 0.05]), cfg)
        assert w[0] == 0.0 and w[1] == 0.0 and w[2] == 1.0
        assert w[3] == pytest.approx((1 - 0.25) ** 2)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            RobustWeightConfig("huber", 0.0)
        with pytest.raises(ValueError):
            RobustWeightConfig("lorentzian", 1.0)


class TestLmStep:
    def test_zero_residuals_zero_step(self):
        rng = np.random.default_rng(5)
        jac = rng.normal(size=(40, 6))
        delta = lm_step(jac, np.zeros(40), np.ones(40), 1e-6)
        np.testing.assert_allclose(delta, 0.0)

    def test_matches_qr_oracle_at_zero_damping(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            jac = rng.normal(size=(50, 6))
            res = rng.normal(size=50)
            weights = rng.uniform(0.1, 1.0, size=50)
            delta = lm_step(jac, res, weights, 0.0)
            sw = np.sqrt(weights)
            q, r = np.linalg.qr(sw[:, None] * jac)
            expected = np.linalg.solve(r, q.T @ (sw * res))
            np.testing.assert_allclose(delta, expected, atol=1e-9)

    def test_damping_shrinks_step_monotonically(self):
        rng = np.random.default_rng(7)
        jac = rng.normal(size=(60, 6))
        res = rng.normal(size=60)
        w = np.ones(60)
        lambdas = [0.0, 1e-3, 1e-1, 10.0, 1e3, 1e6]
        norms = [np.linalg.norm(lm_step(jac, res, w, lam)) for lam in lambdas]
        assert all(a >= b for a, b in zip(norms, norms[1:]))
        assert norms[-1] < 1e-4 * norms[0]

    def test_singular_system_raises(self):
        jac = np.zeros((20, 6))
        with pytest.raises(SingularSystem):
            lm_step(jac, np.ones(20), np.ones(20), 1e-6)


def _weighted_cost_oracle(pyr0, i1_level, camera, pose, features, level, config):
    """Explicit per-feature per-pixel loop over patches (dict union)."""
    grid = brute_force_mask(features, i1_level.shape[1], i1_level.shape[0], level)
    img0 = pyr0.levels[level]
    total, count = 0.0, 0
    residuals = []
    for (x, y), rho in sorted(grid.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        point = backproject(camera, np.array([float(x), float(y)]), rho)
        warped = pose.transform(point)
        if warped[2] <= 1e-9:
            continue
        u = camera.fx * warped[0] / warped[2] + camera.cx
        v = camera.fy * warped[1] / warped[2] + camera.cy
        h, w = i1_level.shape
        if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
            continue
        residuals.append(sample_bilinear(i1_level, u, v) - img0[y, x])
    residuals = np.array(residuals)
    weights = robust_weights(residuals, config)
    return float(np.mean(weights * residuals**2))


class TestMaskEquivalence:
    def test_masked_cost_equals_explicit_loop(self, rendered_pyramids, rendered_pair):
        from sparsealign.iclk import _weighted_cost

        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        rng = np.random.default_rng(23)
        data = build_masks(features, pyr0.level_dims)
        for level in range(4):
            if data[level].count == 0:
                continue
            done = precompute_template(data[level], pyr0, CAM)
            cam_level = CAM.at_level(level)
            pose = gt.compose(se3_exp(rng.normal(scale=1e-3, size=6)))
            res, valid = compute_residuals(done, pyr1.levels[level], cam_level, pose)
            cfg = RobustWeightConfig("huber", 0.1)
            masked = _weighted_cost(res, valid, cfg)
            loop = _weighted_cost_oracle(
                pyr0, pyr1.levels[level], cam_level, pose, features, level, cfg
            )
            assert abs(masked - loop) < 1e-10


class TestAlign:
    def test_fixed_point_at_ground_truth(self, rendered_pyramids, rendered_pair):
        pyr0, _ = rendered_pyramids
        _, _, features, _ = rendered_pair
        result = align(pyr0, pyr0, features, CAM, Se3Pose.identity())
        assert result.converged
        assert all(it <= 1 for it in result.iterations_per_level)
        np.testing.assert_allclose(result.pose.matrix(), np.eye(4), atol=1e-6)

    def test_recovers_perturbed_pose(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        rng = np.random.default_rng(31)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        tdir = rng.normal(size=3)
        tdir /= np.linalg.norm(tdir)
        init = gt.compose(
            se3_exp(np.concatenate([0.02 * 50.0 * tdir, math.radians(2.0) * axis]))
        )
        result = align(pyr0, pyr1, features, CAM, init)
        _, e_rot = pose_error(gt, result.pose)
        e_px = pixel_error(features, gt, result.pose, CAM)
        assert result.converged
        assert e_rot < 0.01
        assert e_px < 1.5

    def test_error_reduced_tenfold_within_basin(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        rng = np.random.default_rng(33)
        for _ in range(3):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            init = gt.compose(se3_exp(np.concatenate([np.zeros(3), math.radians(3.0) * axis])))
            e0 = pixel_error(features, gt, init, CAM)
            result = align(pyr0, pyr1, features, CAM, init)
            e1 = pixel_error(features, gt, result.pose, CAM)
            assert e1 < e0 / 10.0

    def test_accepted_cost_nonincreasing_per_level(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        init = gt.compose(se3_exp(np.array([0.5, -0.3, 0.2, 0.01, -0.01, 0.02])))
        result = align(pyr0, pyr1, features, CAM, init)
        for level_hist in result.residual_history:
            if not level_hist:
                continue
            running = np.minimum.accumulate(level_hist)
            # the run's best cost within a level never increases
            assert all(np.diff(running) <= 1e-15)

    def test_all_ones_weights_bitwise_equals_none(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        init = gt.compose(se3_exp(np.array([0.2, 0.1, -0.1, 0.005, 0.004, -0.003])))
        a = align(
            pyr0, pyr1, features, CAM, init,
            AlignOptions(weight_config=RobustWeightConfig("none", 1.0)),
        )
        b = align(
            pyr0, pyr1, features, CAM, init,
            AlignOptions(weight_config=RobustWeightConfig("huber", 1e9)),
        )
        assert (a.pose.matrix() == b.pose.matrix()).all()
        assert a.residual_history == b.residual_history

    def test_iterations_respect_budget(self, rendered_pyramids, rendered_pair):
        pyr0, pyr1 = rendered_pyramids
        _, _, features, gt = rendered_pair
        init = gt.compose(se3_exp(np.array([1.0, 0.5, -0.5, 0.02, 0.01, 0.03])))
        result = align(pyr0, pyr1, features, CAM, init, AlignOptions(max_iterations=4))
        assert all(it <= 4 for it in result.iterations_per_level)


class TestAlignOptionsJson:
    def test_roundtrip_with_lambda_key(self):
        opts = AlignOptions.from_json_dict(
            {
                "max_iterations": 7,
                "lambda": 1e-4,
                "weight_kind": "tukey",
                "weight_threshold": 0.3,
                "convergence_tol": 1e-6,
            }
        )
        assert opts.max_iterations == 7
        assert opts.damping == 1e-4
        assert opts.weight_config.kind == "tukey"
        d = opts.to_json_dict()
        assert d["lambda"] == 1e-4
        assert AlignOptions.from_json_dict(d) == opts
