"""The parameter triple flowing through fitting and refinement."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import Extrinsics
from .errors import ShapeMismatchError
from .model import BodyModel, PoseVector, ShapeVector


@dataclass(frozen=True)
class ParamSet:
    """Pose, shape and camera extrinsics: one estimate of a body in an image."""

    pose: PoseVector
    shape: ShapeVector
    camera: Extrinsics

    def flatten(self) -> np.ndarray:
        """Concatenate as [pose (D), shape (B), s, t_x, t_y]."""
        cam = np.array([self.camera.s, self.camera.t_x, self.camera.t_y])
        return np.concatenate([self.pose.values, self.shape.values, cam])

    def with_pose(self, values: np.ndarray) -> "ParamSet":
        return replace(self, pose=PoseVector(values))


def zero_params(model: BodyModel, camera: Extrinsics | None = None) -> ParamSet:
    return ParamSet(
        pose=PoseVector(np.zeros(model.num_pose_dofs)),
        shape=ShapeVector(np.zeros(model.num_shape_dims)),
        camera=camera or Extrinsics(1.0, 0.0, 0.0),
    )


def unflatten(model: BodyModel, vec: np.ndarray) -> ParamSet:
    vec = np.asarray(vec, dtype=float)
    expected = model.num_pose_dofs + model.num_shape_dims + 3
    if vec.shape != (expected,):
        raise ShapeMismatchError(f"flat parameters must have length {expected}, got {vec.shape}")
    D, B = model.num_pose_dofs, model.num_shape_dims
    return ParamSet(
        pose=PoseVector(vec[:D]),
        shape=ShapeVector(vec[D : D + B]),
        camera=Extrinsics(float(vec[D + B]), float(vec[D + B + 1]), float(vec[D + B + 2])),
    )


def split_flat(model: BodyModel, vec):
    """Slice a flat vector (plain or dual) into (pose, shape, (s, t_x, t_y))."""
    D, B = model.num_pose_dofs, model.num_shape_dims
    return vec[:D], vec[D : D + B], (vec[D + B], vec[D + B + 1], vec[D + B + 2])
