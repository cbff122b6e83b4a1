"""Shared fixtures: a small procedural scene and one rendered view pair."""

import numpy as np
import pytest

from sparsealign.geometry import PinholeCamera
from sparsealign.image import build_pyramid, to_grayscale
from sparsealign.synth import (
    PoseSamplingConstraints,
    generate_scene,
    render,
    sample_features,
    sample_pose_pair,
)

SMALL_CAMERA = PinholeCamera(180.0, 180.0, 94.0, 60.0, 188, 120)

SMALL_CONSTRAINTS = PoseSamplingConstraints(
    altitude_range=(40.0, 55.0),
    max_baseline=3.0,
    max_relative_angle=np.radians(3.0),
    max_tilt=np.radians(8.0),
)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(seed=3, grid_size=97, spacing=1.0, height_scale=6.0, texture_size=513)


@pytest.fixture(scope="session")
def small_camera():
    return SMALL_CAMERA


@pytest.fixture(scope="session")
def rendered_pair(small_scene, small_camera):
    """(view0, view1, features, gt_relative_pose) on the small scene."""
    rng = np.random.default_rng(100)
    pose0, pose1 = sample_pose_pair(small_scene, small_camera, rng, SMALL_CONSTRAINTS)
    view0 = render(small_scene, pose0, small_camera)
    view1 = render(small_scene, pose1, small_camera)
    features = sample_features(view0.depth, count=30, rng=rng)
    gt = pose1.inverse().compose(pose0)
    return view0, view1, features, gt


@pytest.fixture(scope="session")
def rendered_pyramids(rendered_pair):
    view0, view1, _, _ = rendered_pair
    return (
        build_pyramid(to_grayscale(view0.rgb)),
        build_pyramid(to_grayscale(view1.rgb)),
    )
