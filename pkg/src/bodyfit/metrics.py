"""Evaluation metrics for recovered bodies.

Positions come in model units (meters); position errors are reported in
millimeters. PCK operates in pixels with an inclusive boundary and a
bounding-box normalizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    EmptySubsetError,
    ShapeMismatchError,
    UndefinedMetricError,
)
from .model import JointSet2D, JointSet3D, Mesh

MM_PER_UNIT = 1000.0


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray  # (3, 3), proper orthonormal
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        if self.scale <= 0:
            raise DegenerateGeometryError("similarity scale must be positive")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9:
            raise DegenerateGeometryError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise DegenerateGeometryError("rotation must have determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def _check_matching(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def mpjpe(
    pred: JointSet3D, gt: JointSet3D, root_align: bool = True, root_index: int = 0
) -> float:
    """Mean per-joint position error in millimeters.

    Root-aligned by default: the root joint is subtracted from both sets
    before measuring, which removes global translation.
    """
    _check_matching(pred.positions, gt.positions, "joint sets")
    p, g = pred.positions, gt.positions
    if root_align:
        p = p - p[root_index]
        g = g - g[root_index]
    return float(np.linalg.norm(p - g, axis=1).mean() * MM_PER_UNIT)


def procrustes_align(pred: JointSet3D, gt: JointSet3D) -> tuple[SimilarityTransform, np.ndarray]:
    """Best-fit similarity transform of pred onto gt (least squares).

    Closed form: center both sets, factor the cross-covariance by SVD with a
    reflection guard, take the scale from the trace ratio.
    """
    _check_matching(pred.positions, gt.positions, "joint sets")
    p, g = pred.positions, gt.positions
    if p.shape[0] < 3:
        raise DegenerateGeometryError("alignment needs at least 3 joints")
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    x, y = p - mu_p, g - mu_g
    var_p = (x**2).sum() / p.shape[0]
    if var_p <= 0:
        raise DegenerateGeometryError("pred joints are all coincident")
    cov = y.T @ x / p.shape[0]
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= d[0] * 1e-12:
        raise DegenerateGeometryError("joint configuration is rank deficient (collinear)")
    flip = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        flip[-1] = -1.0
    rot = u @ np.diag(flip) @ vt
    scale = float((d * flip).sum() / var_p)
    if scale <= 0:
        raise DegenerateGeometryError("optimal scale is non-positive")
    trans = mu_g - scale * rot @ mu_p
    transform = SimilarityTransform(scale, rot, trans)
    return transform, transform.apply(p)


def pa_mpjpe(pred: JointSet3D, gt: JointSet3D) -> float:
    """MPJPE after optimal similarity alignment, in millimeters."""
    _, aligned = procrustes_align(pred, gt)
    return mpjpe(JointSet3D(aligned), gt, root_align=False)


def pve(pred_mesh: Mesh, gt_mesh: Mesh) -> float:
    """Mean per-vertex position error in millimeters."""
    if pred_mesh.layer != gt_mesh.layer:
        raise ShapeMismatchError(
            f"meshes are different layers: {pred_mesh.layer} vs {gt_mesh.layer}"
        )
    _check_matching(pred_mesh.vertices, gt_mesh.vertices, "meshes")
    return float(
        np.linalg.norm(pred_mesh.vertices - gt_mesh.vertices, axis=1).mean() * MM_PER_UNIT
    )


def keypoint_bbox_max_side(joints: JointSet2D) -> float:
    """Longest side of the bounding box of the visible joints, in pixels."""
    visible = joints.positions[joints.visibility > 0]
    if visible.shape[0] == 0:
        raise UndefinedMetricError("no visible joints to form a bounding box")
    span = visible.max(axis=0) - visible.min(axis=0)
    return float(span.max())


def pck(
    pred: JointSet2D, gt: JointSet2D, threshold: float, normalizer: float | None = None
) -> float:
    """Fraction of visible joints within threshold * normalizer pixels (inclusive).

    The default normalizer is the longest side of the ground-truth keypoint
    bounding box.
    """
    _check_matching(pred.positions, gt.positions, "joint sets")
    if threshold <= 0:
        raise UndefinedMetricError("pck threshold must be positive")
    if normalizer is None:
        normalizer = keypoint_bbox_max_side(gt)
    if normalizer <= 0:
        raise UndefinedMetricError("pck normalizer must be positive")
    visible = (gt.visibility > 0) & (pred.visibility > 0)
    count = int(visible.sum())
    if count == 0:
        raise UndefinedMetricError("no visible joints; pck is undefined, not zero")
    dist = np.linalg.norm(pred.positions - gt.positions, axis=1)
    hits = int(np.count_nonzero(dist[visible] <= threshold * normalizer))
    return hits / count


def subset_middle_half(frame_count: int) -> range:
    """Index range keeping the middle half: drop ceil(N/4) frames at each end."""
    if frame_count < 4:
        raise EmptySubsetError(f"need at least 4 frames, got {frame_count}")
    cut = math.ceil(frame_count / 4)
    return range(cut, frame_count - cut)
