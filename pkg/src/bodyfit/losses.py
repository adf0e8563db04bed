"""Training-style objective suite over keypoints and parameters.

Every loss is an L1 mean over its supervised elements (stage sums excepted,
see :func:`refinement_loss`), which keeps one set of weights usable across
differing joint counts and parameter sizes. 2-D keypoints are divided by the
long image side before the L1 so a single keypoint weight serves the 2-D and
3-D terms at comparable scale. Missing supervision contributes zero rather
than erroring; the camera never has direct supervision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dual
from .errors import ConfigError, ShapeMismatchError
from .model import JointSet2D, JointSet3D, PoseVector, ShapeVector

log = logging.getLogger(__name__)

# default loss weights: keypoints 0.05, shape 5e-4, pose 1e-3, refinement 0.1
DEFAULT_LAMBDA_KP = 0.05
DEFAULT_LAMBDA_SHAPE = 0.0005
DEFAULT_LAMBDA_POSE = 0.001
DEFAULT_LAMBDA_REFINE = 0.1


@dataclass(frozen=True)
class LossWeights:
    lambda_kp: float = DEFAULT_LAMBDA_KP
    lambda_shape: float = DEFAULT_LAMBDA_SHAPE
    lambda_pose: float = DEFAULT_LAMBDA_POSE
    lambda_refine: float = DEFAULT_LAMBDA_REFINE

    def __post_init__(self):
        for name in ("lambda_kp", "lambda_shape", "lambda_pose", "lambda_refine"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Supervision:
    """Available ground truth for one sample; camera truth intentionally absent."""

    pose_gt: PoseVector | None = None
    shape_gt: ShapeVector | None = None
    joints3d_gt: JointSet3D | None = None
    joints2d_gt: JointSet2D | None = None

    def __post_init__(self):
        if all(
            f is None
            for f in (self.pose_gt, self.shape_gt, self.joints3d_gt, self.joints2d_gt)
        ):
            raise ConfigError("supervision must carry at least one field")


@dataclass(frozen=True)
class Prediction:
    """Model outputs entering the losses."""

    pose: PoseVector
    shape: ShapeVector
    joints3d: JointSet3D | None = None
    joints2d: JointSet2D | None = None


def weighted_l1_mean(pred, gt, weights=None, denom: int | None = None):
    """Mean absolute difference; optional per-row weights, fixed denominator.

    The denominator counts all elements (not just visible ones) so fully
    masked rows contribute zero instead of making the loss undefined.
    Dual-friendly in ``pred``.
    """
    diff = dual.absolute(pred - gt)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        diff = diff * w.reshape((-1,) + (1,) * (len(dual.value(diff).shape) - 1))
    total = dual.sum_(diff)
    if denom is None:
        denom = int(np.prod(dual.value(pred).shape)) or 1
    return total / denom


def _pair_visibility(a, b):
    return a.visibility * b.visibility


def keypoint_loss(
    joints3d: JointSet3D | None,
    joints3d_gt: JointSet3D | None,
    joints2d: JointSet2D | None,
    joints2d_gt: JointSet2D | None,
    image_wh: tuple[float, float] | None = None,
) -> float:
    """L1 over 3-D joints plus L1 over (normalized) 2-D joints.

    Visibility enters multiplicatively per joint; each term averages over all
    K x coords elements of its set. A missing pair contributes zero.
    """
    total = 0.0
    if joints3d is not None and joints3d_gt is not None:
        if joints3d.positions.shape != joints3d_gt.positions.shape:
            raise ShapeMismatchError("3-D joint sets differ in shape")
        total = total + weighted_l1_mean(
            joints3d.positions, joints3d_gt.positions, _pair_visibility(joints3d, joints3d_gt)
        )
    if joints2d is not None and joints2d_gt is not None:
        if joints2d.positions.shape != joints2d_gt.positions.shape:
            raise ShapeMismatchError("2-D joint sets differ in shape")
        scale = float(max(image_wh)) if image_wh else 1.0
        total = total + weighted_l1_mean(
            joints2d.positions / scale,
            joints2d_gt.positions / scale,
            _pair_visibility(joints2d, joints2d_gt),
        )
    return total


def pose_shape_loss(
    pose: PoseVector, pose_gt: PoseVector, shape: ShapeVector, shape_gt: ShapeVector
) -> tuple[float, float]:
    """Mean absolute parameter errors, (pose term, shape term)."""
    if pose.values.shape != pose_gt.values.shape:
        raise ShapeMismatchError("pose vectors differ in length")
    if shape.values.shape != shape_gt.values.shape:
        raise ShapeMismatchError("shape vectors differ in length")
    return (
        weighted_l1_mean(pose.values, pose_gt.values),
        weighted_l1_mean(shape.values, shape_gt.values),
    )


def combined_loss(
    pred: Prediction,
    sup: Supervision,
    weights: LossWeights | None = None,
    image_wh: tuple[float, float] | None = None,
) -> float:
    """Weighted sum of the keypoint and parameter losses.

    Missing supervision fields are skipped (logged at debug level), mirroring
    weakly supervised training where only part of the signal exists.
    """
    weights = weights or LossWeights()
    missing = []
    total = 0.0
    kp = keypoint_loss(pred.joints3d, sup.joints3d_gt, pred.joints2d, sup.joints2d_gt, image_wh)
    total = total + weights.lambda_kp * kp
    if sup.joints3d_gt is None:
        missing.append("joints3d")
    if sup.joints2d_gt is None:
        missing.append("joints2d")
    if sup.pose_gt is not None:
        total = total + weights.lambda_pose * weighted_l1_mean(pred.pose.values, sup.pose_gt.values)
    else:
        missing.append("pose")
    if sup.shape_gt is not None:
        total = total + weights.lambda_shape * weighted_l1_mean(
            pred.shape.values, sup.shape_gt.values
        )
    else:
        missing.append("shape")
    if missing:
        log.debug("combined_loss: unsupervised fields contribute zero: %s", ", ".join(missing))
    return total


def refinement_loss(stage_poses: Sequence[PoseVector], pose_gt: PoseVector) -> float:
    """Per-stage pose supervision: sum over stages of the stage's L1 mean."""
    if len(stage_poses) == 0:
        raise ConfigError("refinement loss needs at least one stage")
    total = 0.0
    for pose in stage_poses:
        if pose.values.shape != pose_gt.values.shape:
            raise ShapeMismatchError("stage pose length differs from ground truth")
        total = total + weighted_l1_mean(pose.values, pose_gt.values)
    return total


def total_loss(
    coarse_term: float, final_term: float, refine_term: float, weights: LossWeights | None = None
) -> float:
    """Final objective: coarse + final stages plus weighted per-stage refinement."""
    weights = weights or LossWeights()
    return final_term + coarse_term + weights.lambda_refine * refine_term
