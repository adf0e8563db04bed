"""Mesh-to-mesh fitting: squared vertex objective and the staged protocol.

Fitting drives one model's posed skin onto a target mesh with the same
vertex layout (correspondence is by index). The global orientation can be
supplied as an axis-angle, converted once to the model's root Euler order and
held fixed through every stage; joint limits enter the objective as soft
quadratic penalties and the returned pose is hard-clamped at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dual
from .camera import Extrinsics
from .errors import ConfigError, ShapeMismatchError
from .metrics import MM_PER_UNIT
from .model import (
    LAYER_SKIN,
    BodyModel,
    Mesh,
    PoseVector,
    ShapeVector,
    clamp_pose,
    posed_skin_vertices,
)
from .optim import FitSchedule, FitStage, default_schedule, freeze_root_dofs, minimize
from .params import ParamSet, split_flat, unflatten, zero_params
from .rotations import axis_angle_to_euler


def limit_penalty(model: BodyModel, pose, weight: float):
    """Soft quadratic penalty on pose angles outside their DOF limits."""
    if weight == 0.0:
        return 0.0
    limits = model.dof_limits
    lo = np.where(np.isfinite(limits[:, 0]), limits[:, 0], 0.0)
    hi = np.where(np.isfinite(limits[:, 1]), limits[:, 1], 0.0)
    finite_lo = np.isfinite(limits[:, 0])
    finite_hi = np.isfinite(limits[:, 1])
    over = dual.maximum(pose - hi, 0.0) * finite_hi
    under = dual.maximum(lo - pose, 0.0) * finite_lo
    excess = over + under
    return weight * dual.sum_(excess * excess)


def mesh_distance(
    model: BodyModel, params: ParamSet, target: Mesh, limit_penalty_weight: float = 0.0
) -> float:
    """Mean squared vertex distance between the posed skin and the target."""
    if target.layer != LAYER_SKIN:
        raise ShapeMismatchError("mesh fitting targets the skin layer")
    if target.vertices.shape[0] != model.num_skin_vertices:
        raise ShapeMismatchError(
            f"target has {target.vertices.shape[0]} vertices, model has {model.num_skin_vertices}"
        )
    return float(
        _mesh_objective_value(
            model, params.pose.values, params.shape.values, target.vertices, limit_penalty_weight
        )
    )


def _mesh_objective_value(model, pose, shape, target_vertices, penalty_weight):
    verts = posed_skin_vertices(model, pose, shape)
    diff = verts - target_vertices
    value = dual.sum_(diff * diff) / target_vertices.shape[0]
    return value + limit_penalty(model, pose, penalty_weight)


def make_mesh_objective(model: BodyModel, target: Mesh, penalty_weight: float):
    """Flat-vector objective over [pose | shape | extrinsics] (extrinsics inert)."""

    def objective(vec):
        pose, shape, _ = split_flat(model, vec)
        out = _mesh_objective_value(model, pose, shape, target.vertices, penalty_weight)
        return out

    return objective


@dataclass(frozen=True)
class StageReport:
    name: str
    iterations: int
    objective: float
    pve_mm: float


def fit_model_to_mesh(
    model: BodyModel,
    target: Mesh,
    init: ParamSet | None = None,
    schedule: FitSchedule | None = None,
    source_global_orient: np.ndarray | None = None,
) -> tuple[ParamSet, list[StageReport]]:
    """Run the staged fit, warm-starting each stage from the previous one.

    With ``source_global_orient`` (axis-angle), the root angles are converted
    to the model's root axis order, written into the initial pose and removed
    from every stage's mask (stages may opt out via ``unfreeze_root``).
    The last report reflects the returned, limit-clamped parameters.
    """
    if target.layer != LAYER_SKIN or target.vertices.shape[0] != model.num_skin_vertices:
        raise ShapeMismatchError("target must be a skin mesh with the model's vertex count")
    schedule = schedule or default_schedule(model)
    init = init or zero_params(model)
    vec = init.flatten()
    if source_global_orient is not None and schedule.freeze_global:
        root_axes = model.dof_specs[0].axes
        if len(root_axes) != 3:
            raise ConfigError(
                "freezing the global orientation requires a 3-axis root joint, "
                f"model root has {root_axes!r}"
            )
        euler = axis_angle_to_euler(np.asarray(source_global_orient, dtype=float), root_axes)
        root_idx = list(model.joint_dof_indices(0))
        vec[root_idx] = euler
        schedule = freeze_root_dofs(schedule, model)

    reports: list[StageReport] = []
    for stage in schedule.stages:
        objective = make_mesh_objective(model, target, stage.limit_penalty_weight)
        vec, trace = minimize(objective, vec, stage)
        reports.append(
            StageReport(
                name=stage.name,
                iterations=len(trace) - 1,
                objective=trace[-1],
                pve_mm=_pve_of(model, vec, target),
            )
        )

    result = unflatten(model, vec)
    clamped = clamp_pose(model, result.pose.values)
    result = ParamSet(PoseVector(clamped), result.shape, result.camera)
    if not np.array_equal(clamped, vec[: model.num_pose_dofs]):
        final_vec = result.flatten()
        reports[-1] = replace(
            reports[-1],
            objective=make_mesh_objective(model, target, schedule.stages[-1].limit_penalty_weight)(
                final_vec
            ),
            pve_mm=_pve_of(model, final_vec, target),
        )
    return result, reports


def _pve_of(model: BodyModel, vec: np.ndarray, target: Mesh) -> float:
    pose, shape, _ = split_flat(model, vec)
    verts = posed_skin_vertices(model, pose, shape)
    return float(np.linalg.norm(verts - target.vertices, axis=1).mean() * MM_PER_UNIT)


def render_target_mesh(model: BodyModel, params: ParamSet, clamp: bool = False) -> Mesh:
    """Pose a model's skin for use as a fitting target (test/demo helper)."""
    verts = posed_skin_vertices(model, params.pose.values, params.shape.values, clamp=clamp)
    return Mesh(verts, LAYER_SKIN)


def default_fit_extrinsics() -> Extrinsics:
    return Extrinsics(1.0, 0.0, 0.0)
