"""Scikit-learn style estimator facade over the alignment chain.

``SparsePoseAligner`` exposes the full pipeline (pyramidal pose solve,
subpixel feature alignment, robust pose re-optimization, optional depth
refinement) behind fit/predict/transform with ``get_params`` /
``set_params`` inherited from ``sklearn.base.BaseEstimator``, so the
solver clones and composes like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .benchmark import warp_target_to_reference
from .geometry import Se3Pose, backproject, project
from .iclk import AlignOptions, RobustWeightConfig, align
from .image import build_pyramid
from .refine import (
    FeatureAlignOptions,
    PoseOptOptions,
    feature_align,
    optimize_pose,
    refine_structure,
)
from .validation import (
    as_camera,
    as_features,
    as_gray_image,
    as_pose,
    check_camera_matches,
)


class SparsePoseAligner(BaseEstimator):
    """Estimate the relative pose aligning a feature-bearing image pair.

    Parameters mirror the solver options: the pyramidal stage runs
    ``max_iterations`` per level with fixed damping ``damping`` and the
    chosen robust weight; the refinement stages can be toggled off.

    Attributes set by :meth:`fit` (trailing underscore, sklearn style):
    ``pose_`` (final estimate), ``alignment_`` (pyramidal solver
    diagnostics), ``correspondences_``, ``refinement_``,
    ``inverse_depths_``.
    """

    def __init__(
        self,
        max_iterations=10,
        damping=1e-6,
        weight_kind="huber",
        weight_threshold=0.1,
        convergence_tol=1e-8,
        stall_tol=1e-4,
        refine_features=True,
        refine_pose=True,
        refine_depth=False,
        feature_align_iters=30,
        feature_align_tol=0.01,
        cauchy_scale=1.0,
        pose_opt_iters=50,
    ):
        self.max_iterations = max_iterations
        self.damping = damping
        self.weight_kind = weight_kind
        self.weight_threshold = weight_threshold
        self.convergence_tol = convergence_tol
        self.stall_tol = stall_tol
        self.refine_features = refine_features
        self.refine_pose = refine_pose
        self.refine_depth = refine_depth
        self.feature_align_iters = feature_align_iters
        self.feature_align_tol = feature_align_tol
        self.cauchy_scale = cauchy_scale
        self.pose_opt_iters = pose_opt_iters

    def _align_options(self) -> AlignOptions:
        return AlignOptions(
            max_iterations=self.max_iterations,
            damping=self.damping,
            weight_config=RobustWeightConfig(
                kind=self.weight_kind, threshold=self.weight_threshold
            ),
            convergence_tol=self.convergence_tol,
            stall_tol=self.stall_tol,
        )

    def fit(self, reference, target, features, camera, initial_pose=None):
        """Run the alignment chain; returns self.

        ``reference``/``target`` are grayscale or RGB images, ``features``
        a sequence of SparseFeature (or an (N, 3) array of u, v,
        inverse_depth rows), ``camera`` the shared intrinsics, and
        ``initial_pose`` an optional starting guess (identity when None).
        """
        camera = as_camera(camera)
        ref = as_gray_image(reference, "reference")
        tgt = as_gray_image(target, "target")
        check_camera_matches(camera, ref, "reference")
        check_camera_matches(camera, tgt, "target")
        feats = as_features(features, camera)
        pose0 = Se3Pose.identity() if initial_pose is None else as_pose(initial_pose)

        self.camera_ = camera
        self.features_ = feats
        self.alignment_ = align(
            build_pyramid(ref),
            build_pyramid(tgt),
            feats,
            camera,
            pose0,
            self._align_options(),
        )
        pose = self.alignment_.pose

        self.correspondences_ = None
        self.refinement_ = None
        self.inverse_depths_ = None
        if self.refine_features:
            self.correspondences_ = feature_align(
                ref,
                tgt,
                feats,
                camera,
                pose,
                FeatureAlignOptions(
                    max_iters=self.feature_align_iters, tol=self.feature_align_tol
                ),
            )
            if self.refine_pose:
                self.refinement_ = optimize_pose(
                    self.correspondences_,
                    camera,
                    pose,
                    PoseOptOptions(
                        cauchy_scale=self.cauchy_scale, max_iters=self.pose_opt_iters
                    ),
                )
                pose = self.refinement_.pose
            if self.refine_depth:
                self.inverse_depths_, self.depth_refined_ = refine_structure(
                    self.correspondences_, camera, pose
                )
        self.pose_ = pose
        return self

    def _check_fitted(self):
        if not hasattr(self, "pose_"):
            raise NotFittedError("call fit before predict/transform")

    def predict(self, features=None) -> np.ndarray:
        """Project features into the target image under the fitted pose.

        Returns an (N, 2) pixel array; defaults to the features passed to
        :meth:`fit`.
        """
        self._check_fitted()
        feats = self.features_ if features is None else as_features(features, self.camera_)
        ref = np.array([[f.u, f.v] for f in feats])
        rho = np.array([f.inverse_depth for f in feats])
        points = self.pose_.transform(backproject(self.camera_, ref, rho))
        return project(self.camera_, points)

    def transform(self, target, dense_depth) -> np.ndarray:
        """Warp the target image into the reference frame via dense depth."""
        self._check_fitted()
        tgt = as_gray_image(target, "target")
        return warp_target_to_reference(
            tgt, np.asarray(dense_depth, dtype=np.float64), self.pose_, self.camera_
        )
