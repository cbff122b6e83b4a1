"""Renderer, pose sampling, jitter, feature sampling, dataset generation."""

import json
import math

import numpy as np
import pytest
from scipy import stats

from sparsealign.errors import (
    CameraBelowTerrain,
    InsufficientValidDepth,
    RejectionBudgetExceeded,
)
from sparsealign.geometry import PinholeCamera, Se3Pose, backproject
from sparsealign.synth import (
    HeightmapScene,
    JitterParams,
    PoseSamplingConstraints,
    generate_scene,
    jitter,
    make_dataset,
    render,
    sample_features,
    sample_pose_pair,
)

NADIR = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def flat_scene(height=2.0, size=97, spacing=1.0):
    rng = np.random.default_rng(8)
    texture = rng.uniform(0.2, 0.8, size=(257, 257, 3)).astype(np.float32)
    return HeightmapScene(np.full((size, size), height), spacing, texture)


class TestRender:
    def test_flat_scene_nadir_constant_depth(self):
        scene = flat_scene(height=2.0)
        cam = PinholeCamera(120.0, 120.0, 47.0, 30.0, 94, 60)
        pose = Se3Pose(NADIR, np.array([48.0, 48.0, 2.0 + 37.0]))
        view = render(scene, pose, cam)
        assert (view.depth > 0).all()
        np.testing.assert_allclose(view.depth, 37.0, atol=1e-4)

    def test_flat_scene_tilted_center_depth(self):
        scene = flat_scene(height=0.0)
        cam = PinholeCamera(120.0, 120.0, 47.0, 30.0, 94, 60)
        theta = math.radians(20.0)
        tilt = np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, math.cos(theta), math.sin(theta)],
                [0.0, math.sin(theta), -math.cos(theta)],
            ]
        )
        # Columns: x_c -> +x, y_c -> rotated, z_c -> tilted down; det must be +1.
        tilt[:, 1] = np.cross(tilt[:, 2], tilt[:, 0])
        pose = Se3Pose(tilt, np.array([48.0, 48.0, 30.0]))
        view = render(scene, pose, cam)
        center = view.depth[30, 47]
        assert center == pytest.approx(30.0 / math.cos(theta), abs=1e-3)

    def test_depth_pixels_backproject_onto_surface(self, small_scene, small_camera, rendered_pair):
        view0, _, _, _ = rendered_pair
        d = view0.depth
        ys, xs = np.nonzero(d > 0)
        pixels = np.column_stack([xs, ys]).astype(float)
        pts = backproject(small_camera, pixels, 1.0 / d[ys, xs])
        world = view0.pose.transform(pts)
        surface = small_scene.surface_height(world[:, 0], world[:, 1])
        tol = 2.0 * small_scene.surface_tolerance()
        assert np.abs(world[:, 2] - surface).max() <= tol

    def test_camera_below_terrain_raises(self):
        scene = flat_scene(height=5.0)
        cam = PinholeCamera(120.0, 120.0, 47.0, 30.0, 94, 60)
        pose = Se3Pose(NADIR, np.array([48.0, 48.0, 4.0]))
        with pytest.raises(CameraBelowTerrain):
            render(scene, pose, cam)

    def test_sky_rays_miss(self):
        scene = flat_scene(height=0.0)
        cam = PinholeCamera(120.0, 120.0, 47.0, 30.0, 94, 60)
        up = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        view = render(scene, Se3Pose(up, np.array([48.0, 48.0, 10.0])), cam)
        assert (view.depth == 0).all()


class TestSamplePosePair:
    def test_easy_constraints_accept_and_stay_inside(self, small_scene, small_camera):
        constraints = PoseSamplingConstraints(
            altitude_range=(40.0, 50.0),
            max_baseline=1.0,
            max_relative_angle=math.radians(1.0),
            max_tilt=1e-9,
        )
        rng = np.random.default_rng(2)
        for _ in range(5):
            p0, p1 = sample_pose_pair(small_scene, small_camera, rng, constraints)
            v0 = render(small_scene, p0, small_camera)
            v1 = render(small_scene, p1, small_camera)
            assert (v0.depth > 0).all() and (v1.depth > 0).all()
            assert np.linalg.norm(p1.translation - p0.translation) <= 1.0

    def test_outward_corner_poses_rejected(self):
        scene = flat_scene(height=0.0, size=33)
        cam = PinholeCamera(120.0, 120.0, 47.0, 30.0, 94, 60)
        constraints = PoseSamplingConstraints(
            altitude_range=(200.0, 300.0),  # footprint far larger than the map
            max_baseline=1.0,
            max_relative_angle=1e-3,
            max_tilt=1e-9,
        )
        with pytest.raises(RejectionBudgetExceeded):
            sample_pose_pair(scene, cam, np.random.default_rng(3), constraints)

    def test_positions_uniform_over_acceptance_region(self):
        # Flat scene, nadir views, fixed altitude, zero baseline.  Roll is
        # free, so the footprint rotates: every position whose distance to
        # the map edge exceeds the corner-ray reach is accepted for any
        # roll, hence accepted samples restricted to that core rectangle
        # must be uniform (chi-square); and no accepted position may sit
        # closer to the edge than the minimal corner reach.
        scene = flat_scene(height=0.0, size=129)
        cam = PinholeCamera(120.0, 120.0, 47.0, 30.0, 94, 60)
        alt = 40.0
        constraints = PoseSamplingConstraints(
            altitude_range=(alt, alt),
            max_baseline=1e-9,
            max_relative_angle=1e-9,
            max_tilt=1e-9,
        )
        rng = np.random.default_rng(4)
        n = 4000
        xs = np.empty(n)
        ys = np.empty(n)
        for i in range(n):
            p0, _ = sample_pose_pair(scene, cam, rng, constraints)
            xs[i], ys[i] = p0.translation[0], p0.translation[1]
        ex = ey = 128.0
        reach = alt * np.hypot(
            max(cam.cx, cam.width - 1 - cam.cx) / cam.fx,
            max(cam.cy, cam.height - 1 - cam.cy) / cam.fy,
        )
        min_reach = alt * min(cam.cx / cam.fx, cam.cy / cam.fy)
        assert xs.min() >= min_reach - 1e-6 and xs.max() <= ex - min_reach + 1e-6
        assert ys.min() >= min_reach - 1e-6 and ys.max() <= ey - min_reach + 1e-6
        core = (
            (xs >= reach)
            & (xs <= ex - reach)
            & (ys >= reach)
            & (ys <= ey - reach)
        )
        counts, _, _ = np.histogram2d(
            xs[core],
            ys[core],
            bins=10,
            range=[[reach, ex - reach], [reach, ey - reach]],
        )
        _, p_value = stats.chisquare(counts.ravel())
        assert p_value > 0.01

    def test_relative_angle_bounded(self, small_scene, small_camera):
        constraints = PoseSamplingConstraints(
            altitude_range=(40.0, 50.0),
            max_baseline=2.0,
            max_relative_angle=math.radians(2.0),
            max_tilt=math.radians(5.0),
        )
        rng = np.random.default_rng(5)
        from sparsealign.geometry import rotation_angle

        for _ in range(10):
            p0, p1 = sample_pose_pair(small_scene, small_camera, rng, constraints)
            assert rotation_angle(p0.rotation.T @ p1.rotation) <= math.radians(2.0) + 1e-12


class TestJitter:
    def test_identity_params_noop(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(0.1, 0.9, size=(16, 16, 3))
        out = jitter(img, JitterParams(0.0, 1.0, 1.0))
        np.testing.assert_allclose(out, img)

    def test_full_brightness_saturates(self):
        img = np.random.default_rng(7).uniform(size=(8, 8, 3))
        out = jitter(img, JitterParams(brightness_delta=1.0))
        np.testing.assert_allclose(out, 1.0)

    def test_same_seed_bit_identical(self):
        img = np.random.default_rng(8).uniform(size=(12, 12, 3))
        a = jitter(img, JitterParams.random(123))
        b = jitter(img, JitterParams.random(123))
        assert (a == b).all()

    def test_formula(self):
        img = np.full((2, 2, 3), 0.6)
        out = jitter(img, JitterParams(brightness_delta=0.1, contrast_factor=1.2, gamma=2.0))
        expected = ((0.6 - 0.5) * 1.2 + 0.5 + 0.1) ** 2.0
        np.testing.assert_allclose(out, expected)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            JitterParams(contrast_factor=0.0)
        with pytest.raises(ValueError):
            JitterParams(gamma=-1.0)


class TestSampleFeatures:
    def test_default_count_and_border(self, rendered_pair):
        view0, _, _, _ = rendered_pair
        feats = sample_features(view0.depth, count=50, rng=9)
        assert len(feats) == 50
        h, w = view0.depth.shape
        for f in feats:
            assert 17 <= f.u < w - 17 and 17 <= f.v < h - 17
            assert f.inverse_depth == 1.0 / view0.depth[int(f.v), int(f.u)]
        locs = {(f.u, f.v) for f in feats}
        assert len(locs) == 50

    def test_single_valid_pixel(self):
        depth = np.zeros((64, 64))
        depth[30, 25] = 10.0
        feats = sample_features(depth, count=1, rng=10)
        assert feats[0].u == 25 and feats[0].v == 30
        assert feats[0].inverse_depth == pytest.approx(0.1)

    def test_insufficient_valid_raises(self):
        depth = np.zeros((64, 64))
        depth[20:22, 20:22] = 5.0
        with pytest.raises(InsufficientValidDepth):
            sample_features(depth, count=10, rng=11)

    def test_empirical_uniformity(self):
        depth = np.full((94, 94), 25.0)
        rng = np.random.default_rng(12)
        us, vs = [], []
        for _ in range(400):
            for f in sample_features(depth, count=50, rng=rng):
                us.append(f.u)
                vs.append(f.v)
        counts, _, _ = np.histogram2d(
            us, vs, bins=10, range=[[17, 94 - 17], [17, 94 - 17]]
        )
        _, p_value = stats.chisquare(counts.ravel())
        assert p_value > 0.01


class TestMakeDataset(object):
    def test_manifest_structure_and_recomputed_relative_pose(
        self, small_scene, small_camera, tmp_path
    ):
        manifest_path = make_dataset(
            small_scene,
            small_camera,
            n_pairs=2,
            out_dir=tmp_path / "ds",
            seed=21,
            jitter_count=10,
            feature_count=30,
            constraints=PoseSamplingConstraints(
                altitude_range=(40.0, 55.0),
                max_baseline=3.0,
                max_relative_angle=math.radians(3.0),
                max_tilt=math.radians(8.0),
            ),
        )
        manifest = json.loads(manifest_path.read_text())
        assert len(manifest["pairs"]) == 2
        total_images = 0
        for entry in manifest["pairs"]:
            for key in ("rgb0", "rgb1", "depth0", "depth1", "features"):
                assert (tmp_path / "ds" / entry[key]).exists()
            assert len(entry["jitter0"]) == 10 and len(entry["jitter1"]) == 10
            total_images += 2 * (1 + 10)
            for rel in entry["jitter0"] + entry["jitter1"]:
                assert (tmp_path / "ds" / rel).exists()
            p0 = Se3Pose.from_list(entry["pose0"])
            p1 = Se3Pose.from_list(entry["pose1"])
            rel = Se3Pose.from_list(entry["relative_pose"])
            recomputed = p1.inverse().compose(p0)
            assert np.abs(recomputed.matrix() - rel.matrix()).max() < 1e-12
        assert total_images == 2 * 2 * 11

    def test_empty_dataset_valid(self, small_scene, small_camera, tmp_path):
        manifest_path = make_dataset(
            small_scene, small_camera, n_pairs=0, out_dir=tmp_path / "empty", seed=1
        )
        manifest = json.loads(manifest_path.read_text())
        assert manifest["pairs"] == []

    def test_deterministic_given_seed(self, small_scene, small_camera, tmp_path):
        kwargs = dict(
            n_pairs=1,
            seed=33,
            jitter_count=2,
            feature_count=30,
            constraints=PoseSamplingConstraints(
                altitude_range=(40.0, 55.0),
                max_baseline=3.0,
                max_relative_angle=math.radians(3.0),
                max_tilt=math.radians(8.0),
            ),
        )
        p1 = make_dataset(small_scene, small_camera, out_dir=tmp_path / "a", **kwargs)
        p2 = make_dataset(small_scene, small_camera, out_dir=tmp_path / "b", **kwargs)
        m1 = json.loads(p1.read_text())
        m2 = json.loads(p2.read_text())
        assert m1["pairs"][0]["pose0"] == m2["pairs"][0]["pose0"]
        a = (tmp_path / "a" / m1["pairs"][0]["rgb0"]).read_bytes()
        b = (tmp_path / "b" / m2["pairs"][0]["rgb0"]).read_bytes()
        assert a == b


class TestSceneType:
    def test_extent_and_surface_interpolation(self):
        elev = np.array([[0.0, 1.0], [2.0, 3.0]])
        tex = np.zeros((4, 4, 3), dtype=np.float32)
        scene = HeightmapScene(elev, 2.0, tex)
        assert scene.extent == (2.0, 2.0)
        assert scene.surface_height(1.0, 1.0) == pytest.approx(1.5)

    def test_save_load_roundtrip(self, small_scene, tmp_path):
        hmap = tmp_path / "s.hmap"
        tex = tmp_path / "s.png"
        small_scene.save(hmap, tex)
        again = HeightmapScene.load(hmap, tex)
        np.testing.assert_allclose(
            again.elevation, small_scene.elevation.astype(np.float32), atol=1e-6
        )
        assert again.spacing == small_scene.spacing
        assert again.texture.shape == small_scene.texture.shape

    def test_rejects_bad_fields(self):
        tex = np.zeros((4, 4, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            HeightmapScene(np.array([[np.inf, 0.0], [0.0, 0.0]]), 1.0, tex)
        with pytest.raises(ValueError):
            HeightmapScene(np.zeros((4, 4)), -1.0, tex)
