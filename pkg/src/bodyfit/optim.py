"""First-order descent with parameter masks, and its gradient backends.

The optimizer is a moment-accumulating (Adam-style) scheme with strict step
rejection: a proposed update is only accepted when it lowers the objective,
otherwise the step is halved, up to ten times, after which the run stops.
Accepted objective values therefore form a non-increasing trace. Gradients
come from forward-mode dual numbers seeded only on the masked coordinates;
central finite differences are available as an independent check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dual
from .errors import ConfigError, EvaluationError
from .model import BodyModel

MAX_HALVINGS = 10
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class FitStage:
    """One stage of a fitting schedule: which parameters move, and how long."""

    name: str
    mask: np.ndarray  # bool over the flat parameter vector
    max_iters: int = 200
    step_size: float = 1e-2
    tolerance: float = 1e-8
    limit_penalty_weight: float = 10.0
    unfreeze_root: bool = False

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.limit_penalty_weight < 0:
            raise ConfigError("limit_penalty_weight must be non-negative")


@dataclass(frozen=True)
class FitSchedule:
    stages: tuple[FitStage, ...]
    freeze_global: bool = True

    def __post_init__(self):
        if len(self.stages) == 0:
            raise ConfigError("a schedule needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))


def gradient(
    objective: Callable, values: np.ndarray, mode: str = "forward-ad", mask: np.ndarray | None = None
) -> np.ndarray:
    """Gradient of a scalar objective at ``values``.

    ``forward-ad`` differentiates through the objective with dual numbers;
    ``central-fd`` uses central differences with a 1e-6 relative step. With a
    mask, only masked coordinates are differentiated (others return 0).
    """
    values = np.asarray(values, dtype=float)
    idx = np.nonzero(mask)[0] if mask is not None else np.arange(values.size)
    grad = np.zeros(values.size)
    if mode == "forward-ad":
        directions = np.zeros((idx.size, values.size))
        directions[np.arange(idx.size), idx] = 1.0
        out = objective(dual.seed_directions(values, directions))
        if isinstance(out, dual.Dual):
            if not np.all(np.isfinite(out.val)):
                raise EvaluationError("objective evaluated to a non-finite value")
            grad[idx] = out.dot
        else:
            if not np.isfinite(out):
                raise EvaluationError("objective evaluated to a non-finite value")
            # objective ignored the duals entirely: constant w.r.t. parameters
    elif mode == "central-fd":
        f0 = objective(values)
        if not np.isfinite(f0):
            raise EvaluationError("objective evaluated to a non-finite value")
        for i in idx:
            h = 1e-6 * max(1.0, abs(values[i]))
            up, down = values.copy(), values.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (objective(up) - objective(down)) / (2.0 * h)
    else:
        raise ConfigError(f"unknown gradient mode {mode!r}")
    return grad


def minimize(
    objective: Callable, init: np.ndarray, stage: FitStage
) -> tuple[np.ndarray, list[float]]:
    """Masked Adam descent with step rejection.

    Returns the final parameters and the trace of accepted objective values
    (the initial value first). Stops on ``max_iters``, on a relative decrease
    below ``tolerance``, or when ten halvings fail to find a lower point.
    """
    x = np.array(init, dtype=float)
    if stage.mask.shape != x.shape:
        raise ConfigError(f"stage mask has shape {stage.mask.shape}, parameters {x.shape}")
    f_cur = float(objective(x))
    if not np.isfinite(f_cur):
        raise EvaluationError("objective is non-finite at the initial parameters")
    trace = [f_cur]
    idx = np.nonzero(stage.mask)[0]
    if idx.size == 0:
        return x, trace
    m = np.zeros(idx.size)
    v = np.zeros(idx.size)
    lr = stage.step_size
    for it in range(1, stage.max_iters + 1):
        g = gradient(objective, x, mode="forward-ad", mask=stage.mask)[idx]
        if not np.any(g):
            break
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**it)
        v_hat = v / (1.0 - ADAM_BETA2**it)
        direction = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        step = lr
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            candidate = x.copy()
            candidate[idx] -= step * direction
            f_new = float(objective(candidate))
            if np.isfinite(f_new) and f_new < f_cur:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x = candidate
        drop = (f_cur - f_new) / max(abs(f_cur), 1e-300)
        f_cur = f_new
        trace.append(f_cur)
        lr = min(stage.step_size, step * 2.0)
        if drop < stage.tolerance:
            break
    return x, trace


# -- schedule construction -----------------------------------------------------


def flat_size(model: BodyModel) -> int:
    return model.num_pose_dofs + model.num_shape_dims + 3


def build_mask(
    model: BodyModel,
    pose: str | Sequence[int] = "none",
    shape: bool = False,
    extrinsics: bool = False,
) -> np.ndarray:
    """Boolean mask over [pose | shape | s, t_x, t_y].

    ``pose`` selects DOFs: "all", "none", "non_root", a joint-group name from
    the model, or an explicit list of DOF indices.
    """
    D, B = model.num_pose_dofs, model.num_shape_dims
    mask = np.zeros(flat_size(model), dtype=bool)
    if isinstance(pose, str):
        if pose == "all":
            mask[:D] = True
        elif pose == "non_root":
            mask[:D] = True
            for i in model.joint_dof_indices(0):
                mask[i] = False
        elif pose == "none":
            pass
        elif pose in model.joint_groups:
            for j in model.joint_groups[pose]:
                for i in model.joint_dof_indices(j):
                    mask[i] = True
        else:
            raise ConfigError(
                f"unknown pose selector {pose!r}; expected all/none/non_root, "
                f"a joint group {sorted(model.joint_groups)}, or indices"
            )
    else:
        for i in pose:
            if not 0 <= i < D:
                raise ConfigError(f"pose DOF index {i} out of range")
            mask[i] = True
    if shape:
        mask[D : D + B] = True
    if extrinsics:
        mask[D + B :] = True
    return mask


def default_schedule(model: BodyModel, extrinsics_final: bool = False) -> FitSchedule:
    """Hierarchical three-stage schedule.

    Upper-limb pose plus shape first, then every non-root DOF plus shape with
    the root held fixed, then unconstrained fine-tuning (extrinsics included
    only when image evidence participates in the objective).
    """
    upper = "upper_limb" if "upper_limb" in model.joint_groups else "non_root"
    stages = (
        FitStage("upper-limb", build_mask(model, pose=upper, shape=True), max_iters=200),
        FitStage("non-root", build_mask(model, pose="non_root", shape=True), max_iters=400),
        FitStage(
            "fine-tune",
            build_mask(model, pose="all", shape=True, extrinsics=extrinsics_final),
            max_iters=400,
        ),
    )
    return FitSchedule(stages=stages, freeze_global=True)


def single_stage_schedule(model: BodyModel, max_iters: int = 1000, **kwargs) -> FitSchedule:
    stage = FitStage(
        "unconstrained", build_mask(model, pose="all", shape=True), max_iters=max_iters, **kwargs
    )
    return FitSchedule(stages=(stage,), freeze_global=True)


def load_schedule(path: str | Path, model: BodyModel) -> FitSchedule:
    """Read a JSON schedule config and resolve its selectors against a model."""
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict) or "stages" not in cfg:
        raise ConfigError(f"schedule file {path} must contain a 'stages' list")
    stages = []
    for i, raw in enumerate(cfg["stages"]):
        try:
            mask = build_mask(
                model,
                pose=raw.get("pose", "none"),
                shape=bool(raw.get("shape", False)),
                extrinsics=bool(raw.get("extrinsics", False)),
            )
            stages.append(
                FitStage(
                    name=raw.get("name", f"stage-{i}"),
                    mask=mask,
                    max_iters=int(raw.get("max_iters", 200)),
                    step_size=float(raw.get("step_size", 1e-2)),
                    tolerance=float(raw.get("tolerance", 1e-8)),
                    limit_penalty_weight=float(raw.get("limit_penalty_weight", 10.0)),
                    unfreeze_root=bool(raw.get("unfreeze_root", False)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"schedule stage {i}: {exc}") from exc
    return FitSchedule(stages=tuple(stages), freeze_global=bool(cfg.get("freeze_global", True)))


def freeze_root_dofs(schedule: FitSchedule, model: BodyModel) -> FitSchedule:
    """Remove the root DOFs from every stage that does not opt out."""
    root = list(model.joint_dof_indices(0))
    stages = []
    for stage in schedule.stages:
        if stage.unfreeze_root:
            stages.append(stage)
            continue
        mask = stage.mask.copy()
        mask[root] = False
        stages.append(replace(stage, mask=mask))
    return FitSchedule(stages=tuple(stages), freeze_global=schedule.freeze_global)
