"""Deterministic synthetic body models for tests, demos and benchmarks.

Real model assets are licensed and cannot ship with the code; the generator
below builds small random models that satisfy every structural invariant
(topologically ordered tree, partition-of-unity weights localized to at most
four bones, marker-backed joint regressor) so the full pipeline can be
exercised end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .model import ROOT_PARENT, UNLIMITED, BodyModel, DofSpec, validate_model

_AXES = "XYZ"


@dataclass(frozen=True)
class ToySpec:
    joints: int
    pose_dofs: int
    skin_vertices: int
    skeleton_vertices: int
    shape_dims: int
    keypoints: int


TOY_PRESETS: dict[str, ToySpec] = {
    "small": ToySpec(joints=6, pose_dofs=14, skin_vertices=96, skeleton_vertices=48,
                     shape_dims=4, keypoints=8),
    "skel-like": ToySpec(joints=24, pose_dofs=46, skin_vertices=6890,
                         skeleton_vertices=24752, shape_dims=10, keypoints=24),
}


def _validate_spec(spec: ToySpec) -> None:
    for name in ("joints", "pose_dofs", "skin_vertices", "shape_dims", "keypoints"):
        if getattr(spec, name) <= 0:
            raise ConfigError(f"toy spec field {name} must be positive")
    if spec.skeleton_vertices < 0:
        raise ConfigError("skeleton_vertices must be >= 0")
    if not spec.joints <= spec.pose_dofs <= 3 * spec.joints:
        raise ConfigError(
            f"pose_dofs must lie in [{spec.joints}, {3 * spec.joints}] for {spec.joints} joints"
        )
    if spec.skin_vertices < spec.joints + 3:
        raise ConfigError("need at least joints + 3 skin vertices")


def _allocate_dofs(rng: np.random.Generator, spec: ToySpec) -> list[int]:
    """Axis count per joint: everyone gets 1, the root fills to 3 first."""
    counts = np.ones(spec.joints, dtype=int)
    extra = spec.pose_dofs - spec.joints
    root_extra = min(2, extra)
    counts[0] += root_extra
    extra -= root_extra
    while extra > 0:
        candidates = np.nonzero(counts < 3)[0]
        pick = int(candidates[rng.integers(len(candidates))])
        counts[pick] += 1
        extra -= 1
    return counts.tolist()


def gen_toy_model(seed: int = 0, spec: ToySpec | None = None) -> BodyModel:
    """Generate a deterministic synthetic model for the given seed and sizes."""
    spec = spec or TOY_PRESETS["small"]
    _validate_spec(spec)
    rng = np.random.default_rng(seed)
    J, D = spec.joints, spec.pose_dofs
    Vs, Vk = spec.skin_vertices, spec.skeleton_vertices
    B, K = spec.shape_dims, spec.keypoints

    parents = np.full(J, ROOT_PARENT, dtype=int)
    for j in range(1, J):
        parents[j] = rng.integers(0, j)

    # joint placement: random bone offsets, root pinned to the origin
    joints = np.zeros((J, 3))
    for j in range(1, J):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        joints[j] = joints[parents[j]] + direction * rng.uniform(0.15, 0.4)

    counts = _allocate_dofs(rng, spec)
    dof_specs = []
    for j in range(J):
        axes = "".join(_AXES[a] for a in rng.permutation(3)[: counts[j]])
        if j == 0:
            limits = tuple(UNLIMITED for _ in axes)
        else:
            limits = tuple(
                (-rng.uniform(0.6, 1.6), rng.uniform(0.6, 1.6)) for _ in axes
            )
        dof_specs.append(DofSpec(joint=j, axes=axes, limits=limits))

    # skin layer: one exact marker vertex per joint, the rest scattered near bones
    skin = np.empty((Vs, 3))
    skin[:J] = joints
    owners = rng.integers(0, J, size=Vs - J)
    skin[J:] = joints[owners] + rng.normal(scale=0.08, size=(Vs - J, 3))

    skin_weights = np.zeros((Vs, J))
    skin_weights[np.arange(J), np.arange(J)] = 1.0
    if J > 1:
        dists = np.linalg.norm(skin[J:, None, :] - joints[None, :, :], axis=2)
        nearest = np.argsort(dists, axis=1)[:, : min(4, J)]
        raw = 1.0 / (np.take_along_axis(dists, nearest, axis=1) + 0.05)
        raw /= raw.sum(axis=1, keepdims=True)
        rows = np.repeat(np.arange(J, Vs), nearest.shape[1])
        skin_weights[rows, nearest.ravel()] = raw.ravel()
    else:
        skin_weights[J:, 0] = 1.0

    shape_dirs = rng.normal(scale=0.01, size=(Vs, 3, B))

    rest_regressor = np.zeros((J, Vs))
    rest_regressor[np.arange(J), np.arange(J)] = 1.0

    # keypoint 0 tracks the root marker exactly; the rest are sparse blends
    keypoint_regressor = np.zeros((K, Vs))
    keypoint_regressor[0, 0] = 1.0
    for k in range(1, K):
        anchor = k % J
        m = int(rng.integers(2, 5))
        near = np.argsort(np.linalg.norm(skin - joints[anchor], axis=1))[:m]
        keypoint_regressor[k, near] = rng.dirichlet(np.ones(m))

    template_skeleton = None
    skeleton_weights = None
    faces_skeleton = None
    if Vk > 0:
        template_skeleton = np.empty((Vk, 3))
        skeleton_weights = np.zeros((Vk, J))
        bone_child = rng.integers(1, J, size=Vk) if J > 1 else np.zeros(Vk, dtype=int)
        frac = rng.uniform(0.0, 1.0, size=Vk)
        for v in range(Vk):
            c = int(bone_child[v])
            p = int(parents[c]) if c > 0 else 0
            template_skeleton[v] = joints[p] + frac[v] * (joints[c] - joints[p])
            template_skeleton[v] += rng.normal(scale=0.01, size=3)
            # the bone segment parent->child swings with the parent joint
            skeleton_weights[v, p] = 1.0
        faces_skeleton = _random_faces(rng, Vk)

    faces_skin = _random_faces(rng, Vs)

    group = _subtree(parents, _first_child(parents))
    name = f"toy-s{seed}-J{J}D{D}V{Vs}B{B}K{K}"
    model = BodyModel(
        name=name,
        template_skin=skin,
        faces_skin=faces_skin,
        shape_dirs=shape_dirs,
        skin_weights=skin_weights,
        joint_parents=parents,
        rest_joints_regressor=rest_regressor,
        keypoint_regressor=keypoint_regressor,
        dof_specs=tuple(dof_specs),
        template_skeleton=template_skeleton,
        faces_skeleton=faces_skeleton,
        skeleton_weights=skeleton_weights,
        joint_groups={"upper_limb": group},
        keypoint_root=0,
    )
    validate_model(model)
    return model


def _random_faces(rng: np.random.Generator, count: int) -> np.ndarray:
    idx = rng.permutation(count)
    usable = 3 * (count // 3)
    return idx[:usable].reshape(-1, 3).astype(int)


def _first_child(parents: np.ndarray) -> int:
    children = np.nonzero(parents == 0)[0]
    return int(children[0]) if children.size else 0


def _subtree(parents: np.ndarray, root: int) -> tuple[int, ...]:
    keep = {root}
    for j in range(root + 1, len(parents)):
        if parents[j] in keep:
            keep.add(j)
    return tuple(sorted(keep))


def with_permuted_axes(model: BodyModel, seed: int = 0) -> BodyModel:
    """Same geometry, but each joint's axis order is reshuffled.

    Useful as a distinct conversion target that can still represent exactly
    the same set of meshes when every joint has three axes.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for spec in model.dof_specs:
        perm = rng.permutation(len(spec.axes))
        axes = "".join(spec.axes[i] for i in perm)
        limits = tuple(spec.limits[i] for i in perm)
        specs.append(DofSpec(joint=spec.joint, axes=axes, limits=limits))
    return replace(model, dof_specs=tuple(specs), name=model.name + "-permuted")
