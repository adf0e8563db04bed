"""Coarse-to-fine refinement of body parameters against image evidence.

A cascade starts from a cheap closed-form initialization and runs L
refinement stages, each a fixed budget of accepted-descent steps on the
evidence objective (L1 reprojection error plus whatever 3-D or parameter
supervision the evidence carries, combined with the standard loss weights).
Every stage's parameters are recorded so per-stage losses can be evaluated,
and individual extrinsic components of any stage can be probed against the
final body pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual
from .camera import DEFAULT_CROP_SIZE, Extrinsics, Intrinsics, lift_extrinsics, project_points
from .errors import ConfigError, InsufficientEvidenceError
from .losses import LossWeights, weighted_l1_mean
from .metrics import keypoint_bbox_max_side, pck
from .model import BodyModel, JointSet2D, JointSet3D, PoseVector, ShapeVector, posed_keypoints_array
from .optim import FitStage, flat_size, minimize
from .params import ParamSet, split_flat, unflatten

DEFAULT_STAGES = 6
DEFAULT_STEPS_PER_STAGE = 50
REFINE_STEP_SIZE = 0.05
MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Evidence:
    """Observed signals for one image; 2-D keypoints are the required minimum."""

    joints2d: JointSet2D
    intrinsics: Intrinsics
    crop_size: float = DEFAULT_CROP_SIZE
    joints3d: JointSet3D | None = None
    pose_gt: PoseVector | None = None
    shape_gt: ShapeVector | None = None

    @property
    def image_wh(self) -> tuple[float, float]:
        return (self.intrinsics.image_w, self.intrinsics.image_h)


@dataclass(frozen=True)
class StageOutput:
    params: ParamSet
    objective: float
    losses: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class CascadeTrace:
    """Parameter estimates after the initialization and each refinement stage."""

    stages: tuple[StageOutput, ...]
    summary: dict[str, float] = field(default_factory=dict)

    @property
    def final(self) -> ParamSet:
        return self.stages[-1].params

    def stage_params(self) -> list[ParamSet]:
        return [s.params for s in self.stages]


def evidence_terms(model: BodyModel, evidence: Evidence, vec):
    """Loss components of the evidence objective at a flat parameter vector.

    Returns (terms dict, min projected depth). Dual-friendly in ``vec``.
    """
    pose, shape, cam = split_flat(model, vec)
    kp3d = posed_keypoints_array(model, pose, shape)
    translation = lift_extrinsics(cam, evidence.intrinsics, evidence.crop_size)
    uv = project_points(kp3d, evidence.intrinsics, translation)
    depth = dual.value(kp3d)[:, 2] + dual.value(translation)[2]
    scale = float(max(evidence.image_wh))
    vis2d = evidence.joints2d.visibility
    terms = {
        "kp2d": weighted_l1_mean(uv / scale, evidence.joints2d.positions / scale, vis2d)
    }
    if evidence.joints3d is not None:
        terms["kp3d"] = weighted_l1_mean(
            kp3d, evidence.joints3d.positions, evidence.joints3d.visibility
        )
    if evidence.pose_gt is not None:
        terms["pose"] = weighted_l1_mean(pose, evidence.pose_gt.values)
    if evidence.shape_gt is not None:
        terms["shape"] = weighted_l1_mean(shape, evidence.shape_gt.values)
    return terms, float(np.min(depth))


def make_evidence_objective(model: BodyModel, evidence: Evidence, weights: LossWeights):
    """Scalar objective over the flat parameter vector; +inf outside the
    valid domain (non-positive scale or depth)."""

    def objective(vec):
        s = dual.value(vec)[model.num_pose_dofs + model.num_shape_dims]
        if s <= 0:
            return np.inf
        terms, min_depth = evidence_terms(model, evidence, vec)
        if min_depth <= MIN_DEPTH:
            return np.inf
        total = weights.lambda_kp * terms["kp2d"]
        if "kp3d" in terms:
            total = total + weights.lambda_kp * terms["kp3d"]
        if "pose" in terms:
            total = total + weights.lambda_pose * terms["pose"]
        if "shape" in terms:
            total = total + weights.lambda_shape * terms["shape"]
        return total

    return objective


def _loss_breakdown(model, evidence, weights, vec):
    terms, _ = evidence_terms(model, evidence, vec)
    return {k: float(dual.value(v)) for k, v in terms.items()}


def coarse_init(evidence: Evidence, model: BodyModel) -> ParamSet:
    """Closed-form start: zero pose and shape, extrinsics from the 2-D bbox.

    The scale matches the projected size of the rest joints to the keypoint
    bounding box; the in-plane offsets center the projected root on the bbox
    center.
    """
    vis = evidence.joints2d.visibility > 0
    if int(vis.sum()) < 2:
        raise InsufficientEvidenceError("need at least 2 visible keypoints to initialize")
    pts = evidence.joints2d.positions[vis]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    bbox_size = float((hi - lo).max())
    if bbox_size <= 0:
        raise InsufficientEvidenceError("keypoint bounding box is degenerate")
    center = (lo + hi) / 2.0

    rest_joints = model.rest_joints_regressor @ model.template_skin
    spread = float((rest_joints.max(axis=0) - rest_joints.min(axis=0)).max())
    spread = max(spread, 1e-6)
    s = 2.0 * bbox_size / (evidence.crop_size * spread)

    intr = evidence.intrinsics
    t_z = 2.0 * intr.f_x / (s * evidence.crop_size)
    root = rest_joints[0]
    depth = root[2] + t_z
    t_x = (center[0] - intr.c_x) * depth / intr.f_x - root[0]
    t_y = (center[1] - intr.c_y) * depth / intr.f_y - root[1]

    return ParamSet(
        pose=PoseVector(np.zeros(model.num_pose_dofs)),
        shape=ShapeVector(np.zeros(model.num_shape_dims)),
        camera=Extrinsics(s, float(t_x), float(t_y)),
    )


def refine_stage(
    params: ParamSet,
    evidence: Evidence,
    model: BodyModel,
    steps: int,
    weights: LossWeights | None = None,
    step_size: float = REFINE_STEP_SIZE,
) -> ParamSet:
    """One refinement stage: ``steps`` accepted-descent iterations.

    Step rejection guarantees the returned parameters score no worse than the
    input on the evidence objective.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    weights = weights or LossWeights()
    objective = make_evidence_objective(model, evidence, weights)
    stage = FitStage(
        name="refine",
        mask=np.ones(flat_size(model), dtype=bool),
        max_iters=steps,
        step_size=step_size,
        tolerance=1e-12,
    )
    vec, _ = minimize(objective, params.flatten(), stage)
    return unflatten(model, vec)


def run_cascade(
    evidence: Evidence,
    model: BodyModel,
    stages: int = DEFAULT_STAGES,
    steps_per_stage: int = DEFAULT_STEPS_PER_STAGE,
    weights: LossWeights | None = None,
    init: ParamSet | None = None,
    step_size: float = REFINE_STEP_SIZE,
) -> CascadeTrace:
    """Initialize then refine ``stages`` times, recording every estimate.

    The trace has ``stages + 1`` entries with non-increasing objective. When
    the evidence carries pose supervision, the summary reports the per-stage
    refinement loss and the combined total.
    """
    if stages < 1:
        raise ConfigError("a cascade needs at least one stage")
    weights = weights or LossWeights()
    objective = make_evidence_objective(model, evidence, weights)
    current = init or coarse_init(evidence, model)
    outputs = [
        StageOutput(
            params=current,
            objective=float(objective(current.flatten())),
            losses=_loss_breakdown(model, evidence, weights, current.flatten()),
        )
    ]
    for _ in range(stages):
        current = refine_stage(
            current, evidence, model, steps_per_stage, weights=weights, step_size=step_size
        )
        outputs.append(
            StageOutput(
                params=current,
                objective=float(objective(current.flatten())),
                losses=_loss_breakdown(model, evidence, weights, current.flatten()),
            )
        )

    summary: dict[str, float] = {}
    if evidence.pose_gt is not None:
        refine_term = float(
            sum(
                weighted_l1_mean(out.params.pose.values, evidence.pose_gt.values)
                for out in outputs[1:]
            )
        )
        coarse = _supervised_loss(model, evidence, weights, outputs[0].params)
        final = _supervised_loss(model, evidence, weights, outputs[-1].params)
        summary = {
            "refine_loss": refine_term,
            "coarse_loss": coarse,
            "final_loss": final,
            "total_loss": final + coarse + weights.lambda_refine * refine_term,
        }
    return CascadeTrace(stages=tuple(outputs), summary=summary)


def _supervised_loss(model, evidence, weights, params: ParamSet) -> float:
    objective = make_evidence_objective(model, evidence, weights)
    return float(objective(params.flatten()))


def reproject(model: BodyModel, params: ParamSet, evidence: Evidence) -> JointSet2D:
    """Project the model keypoints under a parameter set onto the image."""
    kp3d = posed_keypoints_array(model, params.pose.values, params.shape.values)
    translation = lift_extrinsics(params.camera, evidence.intrinsics, evidence.crop_size)
    uv = project_points(kp3d, evidence.intrinsics, translation)
    return JointSet2D(uv, evidence.joints2d.visibility.copy())


PROBE_SCALE = "scale"
PROBE_PLANE = "plane-translation"


def factorization_probe(
    trace: CascadeTrace,
    evidence: Evidence,
    model: BodyModel,
    component: str,
    layer: int,
) -> tuple[float, float]:
    """Score a hybrid estimate: final body and extrinsics except for one
    component taken from an earlier stage.

    ``component`` selects which extrinsic piece comes from ``layer``: the
    scale, or the in-plane translation pair. Returns (PCK@0.05, PCK@0.1)
    against the evidence keypoints, normalized by their bounding box.
    """
    if not 0 <= layer < len(trace.stages):
        raise ConfigError(f"layer {layer} out of range 0..{len(trace.stages) - 1}")
    final = trace.final
    probed = trace.stages[layer].params
    if component == PROBE_SCALE:
        camera = Extrinsics(probed.camera.s, final.camera.t_x, final.camera.t_y)
    elif component == PROBE_PLANE:
        camera = Extrinsics(final.camera.s, probed.camera.t_x, probed.camera.t_y)
    else:
        raise ConfigError(f"component must be {PROBE_SCALE!r} or {PROBE_PLANE!r}")
    hybrid = ParamSet(final.pose, final.shape, camera)
    projected = reproject(model, hybrid, evidence)
    normalizer = keypoint_bbox_max_side(evidence.joints2d)
    return (
        pck(projected, evidence.joints2d, 0.05, normalizer),
        pck(projected, evidence.joints2d, 0.10, normalizer),
    )
