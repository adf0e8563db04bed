"""Constrained parametric body model: blending, kinematics, skinning.

The model poses a skin mesh (and optionally a skeleton mesh) from a
limited-DOF pose vector: every joint owns 1-3 single-axis rotations, composed
intrinsically in the order declared by its :class:`DofSpec`, concatenated
joint-by-joint into one pose vector of length D. Shape is a linear blend over
B directions. All quantities are in meters.

The array-level functions (`blend_vertices`, `joint_rotations`,
`fk_transforms`, `skin_vertices`, `posed_skin_vertices`) accept either plain
numpy arrays or :class:`bodyfit.dual.Dual` values, so objectives built on
them are differentiable by forward-mode AD.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import dual
from .errors import (
    MissingLayerError,
    ModelValidationError,
    ShapeMismatchError,
)
from .rotations import axis_rotation, homogeneous, validate_axis_order

LAYER_SKIN = "skin"
LAYER_SKELETON = "skeleton"
ROOT_PARENT = -1

# per-axis limits wide open (the root is typically unconstrained)
UNLIMITED = (-np.inf, np.inf)


@dataclass(frozen=True)
class DofSpec:
    """Rotation freedoms of one joint: ordered axes and per-axis limits."""

    joint: int
    axes: str  # e.g. "XZY"; intrinsic composition in this order
    limits: tuple[tuple[float, float], ...]

    def __post_init__(self):
        validate_axis_order(self.axes)
        if len(self.limits) != len(self.axes):
            raise ModelValidationError(
                f"dof_specs[{self.joint}].limits",
                f"expected {len(self.axes)} limit pairs, got {len(self.limits)}",
            )
        for a, (lo, hi) in enumerate(self.limits):
            if not lo <= hi:
                raise ModelValidationError(
                    f"dof_specs[{self.joint}].limits[{a}]", f"lo {lo} > hi {hi}"
                )

    @property
    def dof_count(self) -> int:
        return len(self.axes)


@dataclass(frozen=True)
class PoseVector:
    """Pose angles in radians, ordered by joint then axis; length D."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ShapeMismatchError("pose values must be a 1-D array")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatchError("pose values must be finite")


@dataclass(frozen=True)
class ShapeVector:
    """Shape blend coefficients; length B."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ShapeMismatchError("shape values must be a 1-D array")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatchError("shape values must be finite")


@dataclass(frozen=True)
class Mesh:
    """Vertex array for one layer of the model."""

    vertices: np.ndarray  # (V, 3)
    layer: str = LAYER_SKIN

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ShapeMismatchError(f"mesh vertices must be (V, 3), got {v.shape}")
        if self.layer not in (LAYER_SKIN, LAYER_SKELETON):
            raise ShapeMismatchError(f"unknown layer {self.layer!r}")


def _joint_set(positions, visibility, width):
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[1] != width:
        raise ShapeMismatchError(f"positions must be (K, {width}), got {p.shape}")
    if visibility is None:
        vis = np.ones(p.shape[0])
    else:
        vis = np.asarray(visibility, dtype=float)
        if vis.shape != (p.shape[0],):
            raise ShapeMismatchError("visibility must be (K,)")
        if np.any(vis < 0) or np.any(vis > 1):
            raise ShapeMismatchError("visibility weights must lie in [0, 1]")
    return p, vis


@dataclass(frozen=True)
class JointSet3D:
    positions: np.ndarray  # (K, 3)
    visibility: np.ndarray | None = None

    def __post_init__(self):
        p, vis = _joint_set(self.positions, self.visibility, 3)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "visibility", vis)


@dataclass(frozen=True)
class JointSet2D:
    positions: np.ndarray  # (K, 2)
    visibility: np.ndarray | None = None

    def __post_init__(self):
        p, vis = _joint_set(self.positions, self.visibility, 2)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "visibility", vis)


@dataclass(frozen=True)
class BodyModel:
    """Immutable model data; safe to share across threads and processes."""

    name: str
    template_skin: np.ndarray  # (Vs, 3)
    faces_skin: np.ndarray  # (Fs, 3) int
    shape_dirs: np.ndarray  # (Vs, 3, B)
    skin_weights: np.ndarray  # (Vs, J), rows sum to 1
    joint_parents: np.ndarray  # (J,), parent[0] == ROOT_PARENT, parent < child
    rest_joints_regressor: np.ndarray  # (J, Vs)
    keypoint_regressor: np.ndarray  # (K, Vs)
    dof_specs: tuple[DofSpec, ...]  # one per joint, ordered by joint id
    template_skeleton: np.ndarray | None = None  # (Vk, 3)
    faces_skeleton: np.ndarray | None = None
    skeleton_weights: np.ndarray | None = None  # (Vk, J)
    joint_groups: dict[str, tuple[int, ...]] = field(default_factory=dict)
    keypoint_root: int = 0
    units: str = "m"
    pose_correctives: np.ndarray | None = None  # optional hook, unused by the ops

    @property
    def num_joints(self) -> int:
        return len(self.joint_parents)

    @property
    def num_skin_vertices(self) -> int:
        return self.template_skin.shape[0]

    @property
    def num_skeleton_vertices(self) -> int:
        return 0 if self.template_skeleton is None else self.template_skeleton.shape[0]

    @property
    def num_shape_dims(self) -> int:
        return self.shape_dirs.shape[2]

    @property
    def num_keypoints(self) -> int:
        return self.keypoint_regressor.shape[0]

    @property
    def num_pose_dofs(self) -> int:
        return sum(spec.dof_count for spec in self.dof_specs)

    @cached_property
    def dof_offsets(self) -> tuple[int, ...]:
        """Start index of each joint's angles within the pose vector."""
        offs, total = [], 0
        for spec in self.dof_specs:
            offs.append(total)
            total += spec.dof_count
        return tuple(offs)

    @cached_property
    def dof_limits(self) -> np.ndarray:
        """(D, 2) array of per-DOF (lo, hi)."""
        rows = [list(pair) for spec in self.dof_specs for pair in spec.limits]
        return np.asarray(rows, dtype=float)

    def joint_dof_indices(self, joint: int) -> range:
        start = self.dof_offsets[joint]
        return range(start, start + self.dof_specs[joint].dof_count)

    def has_skeleton(self) -> bool:
        return self.template_skeleton is not None

    def with_name(self, name: str) -> "BodyModel":
        return replace(self, name=name)


def validate_model(model: BodyModel) -> None:
    """Check every structural invariant; raise on the first violation."""
    J = model.num_joints
    Vs = model.num_skin_vertices
    if model.template_skin.ndim != 2 or model.template_skin.shape[1] != 3:
        raise ModelValidationError("template_skin", "must be (Vs, 3)")
    if model.shape_dirs.shape[:2] != (Vs, 3):
        raise ModelValidationError("shape_dirs", f"must be ({Vs}, 3, B)")
    if model.joint_parents[0] != ROOT_PARENT:
        raise ModelValidationError("joint_parents[0]", f"root parent must be {ROOT_PARENT}")
    for j, p in enumerate(model.joint_parents[1:], start=1):
        if not 0 <= p < j:
            raise ModelValidationError(
                f"joint_parents[{j}]", f"parent {p} must precede its child (topological order)"
            )
    if np.count_nonzero(model.joint_parents == ROOT_PARENT) != 1:
        raise ModelValidationError("joint_parents", "exactly one root is required")
    if len(model.dof_specs) != J:
        raise ModelValidationError("dof_specs", f"expected {J} entries, got {len(model.dof_specs)}")
    for j, spec in enumerate(model.dof_specs):
        if spec.joint != j:
            raise ModelValidationError(f"dof_specs[{j}].joint", f"expected {j}, got {spec.joint}")
    _validate_weights("skin_weights", model.skin_weights, Vs, J)
    if model.rest_joints_regressor.shape != (J, Vs):
        raise ModelValidationError("rest_joints_regressor", f"must be ({J}, {Vs})")
    if model.keypoint_regressor.ndim != 2 or model.keypoint_regressor.shape[1] != Vs:
        raise ModelValidationError("keypoint_regressor", f"must be (K, {Vs})")
    if not 0 <= model.keypoint_root < model.num_keypoints:
        raise ModelValidationError("keypoint_root", "index out of range")
    if model.template_skeleton is not None:
        Vk = model.template_skeleton.shape[0]
        if model.template_skeleton.shape[1:] != (3,):
            raise ModelValidationError("template_skeleton", "must be (Vk, 3)")
        if model.skeleton_weights is None:
            raise ModelValidationError("skeleton_weights", "required when a skeleton layer exists")
        _validate_weights("skeleton_weights", model.skeleton_weights, Vk, J)
    for name, joints in model.joint_groups.items():
        for j in joints:
            if not 0 <= j < J:
                raise ModelValidationError(f"joint_groups[{name!r}]", f"joint {j} out of range")


def _validate_weights(field_name, weights, rows, cols):
    if weights.shape != (rows, cols):
        raise ModelValidationError(field_name, f"must be ({rows}, {cols}), got {weights.shape}")
    if np.any(weights < 0):
        bad = int(np.argwhere(np.any(weights < 0, axis=1))[0][0])
        raise ModelValidationError(f"{field_name}[{bad}]", "negative weight")
    sums = weights.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
    if bad.size:
        raise ModelValidationError(
            f"{field_name}[{int(bad[0])}]", f"row sums to {sums[bad[0]]!r}, expected 1 within 1e-6"
        )


# -- array-level core (dual-friendly) -----------------------------------------


def blend_vertices(model: BodyModel, shape_coeffs):
    """Rest skin vertices and rest joints for given shape coefficients."""
    Vs, B = model.num_skin_vertices, model.num_shape_dims
    dirs = model.shape_dirs.reshape(Vs * 3, B)
    offset = dual.reshape(dual.matmul(dirs, shape_coeffs), (Vs, 3))
    verts = model.template_skin + offset
    joints = dual.matmul(model.rest_joints_regressor, verts)
    return verts, joints


def joint_rotations(model: BodyModel, pose, clamp: bool = False):
    """Per-joint rotation matrices, stacked (J, 3, 3)."""
    mats = []
    for spec in model.dof_specs:
        start = model.dof_offsets[spec.joint]
        mat = None
        for a, ch in enumerate(spec.axes):
            angle = pose[start + a]
            if clamp:
                lo, hi = spec.limits[a]
                angle = dual.clip(angle, lo, hi)
            rot = axis_rotation(ch, angle)
            mat = rot if mat is None else dual.matmul(mat, rot)
        mats.append(mat)
    return dual.stack(mats)


def fk_transforms(model: BodyModel, rotations, rest_joints):
    """Global 4x4 joint transforms, composed root to leaf."""
    globals_ = []
    for j in range(model.num_joints):
        parent = model.joint_parents[j]
        if parent == ROOT_PARENT:
            offset = rest_joints[j]
            local = homogeneous(rotations[j], offset)
            globals_.append(local)
        else:
            offset = rest_joints[j] - rest_joints[parent]
            local = homogeneous(rotations[j], offset)
            globals_.append(dual.matmul(globals_[parent], local))
    return dual.stack(globals_)


def skin_vertices(weights, transforms, rest_vertices, rest_joints):
    """Linear blend skinning with rest-relative bone transforms.

    ``transforms`` are global joint transforms; each bone's contribution is
    taken relative to its rest placement, so identity transforms reproduce the
    rest vertices exactly.
    """
    rot = transforms[:, :3, :3]  # (J, 3, 3)
    trans = transforms[:, :3, 3]  # (J, 3)
    # t_rel = t - R @ rest_joint: translation of the rest-relative transform
    swung = dual.matmul(rot, dual.reshape(rest_joints, (-1, 3, 1)))[:, :, 0]
    t_rel = trans - swung
    J = dual.value(trans).shape[0]
    # delta form: v + sum_j w_j ((R_j - I) v + t_j). Identical to blending the
    # transformed positions when weight rows sum to 1, but identity bones
    # reproduce the rest vertices bitwise.
    rot_delta = rot - np.eye(3)
    blended_rot = dual.reshape(dual.matmul(weights, dual.reshape(rot_delta, (J, 9))), (-1, 3, 3))
    blended_t = dual.matmul(weights, t_rel)
    moved = dual.matmul(blended_rot, dual.reshape(rest_vertices, (-1, 3, 1)))[:, :, 0]
    return rest_vertices + moved + blended_t


def posed_skin_vertices(model: BodyModel, pose, shape_coeffs, clamp: bool = False):
    """Full pipeline: blend -> rotations -> FK -> skin, for the skin layer."""
    rest_verts, rest_joints = blend_vertices(model, shape_coeffs)
    rots = joint_rotations(model, pose, clamp=clamp)
    transforms = fk_transforms(model, rots, rest_joints)
    return skin_vertices(model.skin_weights, transforms, rest_verts, rest_joints)


def posed_keypoints_array(model: BodyModel, pose, shape_coeffs, clamp: bool = False):
    """Evaluation keypoints (K, 3) from the posed skin."""
    verts = posed_skin_vertices(model, pose, shape_coeffs, clamp=clamp)
    return dual.matmul(model.keypoint_regressor, verts)


# -- typed operations ----------------------------------------------------------


def _check_pose(model: BodyModel, pose: PoseVector) -> np.ndarray:
    if pose.values.shape[0] != model.num_pose_dofs:
        raise ShapeMismatchError(
            f"pose has {pose.values.shape[0]} entries, model expects {model.num_pose_dofs}"
        )
    return pose.values


def _check_shape(model: BodyModel, beta: ShapeVector) -> np.ndarray:
    if beta.values.shape[0] != model.num_shape_dims:
        raise ShapeMismatchError(
            f"shape has {beta.values.shape[0]} entries, model expects {model.num_shape_dims}"
        )
    return beta.values


def shape_blend(model: BodyModel, beta: ShapeVector) -> tuple[Mesh, np.ndarray]:
    """Rest skin mesh and rest joint positions for the given shape."""
    coeffs = _check_shape(model, beta)
    verts, joints = blend_vertices(model, coeffs)
    return Mesh(verts, LAYER_SKIN), joints


def pose_to_rotations(model: BodyModel, pose: PoseVector, clamp: bool = False) -> np.ndarray:
    """Per-joint rotation matrices (J, 3, 3) in each joint's declared axis order."""
    values = _check_pose(model, pose)
    return joint_rotations(model, values, clamp=clamp)


def forward_kinematics(
    model: BodyModel, pose: PoseVector, beta: ShapeVector, clamp: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Global joint transforms (J, 4, 4) and posed joint positions (J, 3)."""
    values = _check_pose(model, pose)
    coeffs = _check_shape(model, beta)
    _, rest_joints = blend_vertices(model, coeffs)
    rots = joint_rotations(model, values, clamp=clamp)
    transforms = fk_transforms(model, rots, rest_joints)
    return transforms, transforms[:, :3, 3]


def skin(
    model: BodyModel,
    transforms: np.ndarray,
    rest_mesh: Mesh,
    layer: str,
    rest_joints: np.ndarray,
) -> Mesh:
    """Pose one mesh layer under the given global joint transforms."""
    if transforms.shape[0] != model.num_joints:
        raise ShapeMismatchError(
            f"expected {model.num_joints} transforms, got {transforms.shape[0]}"
        )
    if layer == LAYER_SKIN:
        weights = model.skin_weights
    elif layer == LAYER_SKELETON:
        if model.skeleton_weights is None:
            raise MissingLayerError(f"model {model.name!r} has no skeleton layer")
        weights = model.skeleton_weights
    else:
        raise MissingLayerError(f"unknown layer {layer!r}")
    if rest_mesh.vertices.shape[0] != weights.shape[0]:
        raise ShapeMismatchError(
            f"rest mesh has {rest_mesh.vertices.shape[0]} vertices, "
            f"layer {layer!r} expects {weights.shape[0]}"
        )
    posed = skin_vertices(weights, transforms, rest_mesh.vertices, rest_joints)
    return Mesh(posed, layer)


def regress_keypoints(model: BodyModel, posed_skin: Mesh) -> JointSet3D:
    """Evaluation keypoints from a posed skin mesh."""
    if posed_skin.layer != LAYER_SKIN:
        raise ShapeMismatchError("keypoints are regressed from the skin layer")
    if posed_skin.vertices.shape[0] != model.num_skin_vertices:
        raise ShapeMismatchError("posed skin vertex count does not match the model")
    return JointSet3D(model.keypoint_regressor @ posed_skin.vertices)


@dataclass(frozen=True)
class PosedBody:
    """Convenience bundle produced by :func:`pose_body`."""

    skin: Mesh
    joints: np.ndarray  # (J, 3)
    keypoints: JointSet3D
    skeleton: Mesh | None = None


def pose_body(
    model: BodyModel,
    pose: PoseVector,
    beta: ShapeVector,
    clamp: bool = False,
    with_skeleton: bool = False,
) -> PosedBody:
    """Pose skin (and optionally skeleton), returning meshes, joints, keypoints."""
    values = _check_pose(model, pose)
    coeffs = _check_shape(model, beta)
    rest_verts, rest_joints = blend_vertices(model, coeffs)
    rots = joint_rotations(model, values, clamp=clamp)
    transforms = fk_transforms(model, rots, rest_joints)
    skin_mesh = Mesh(
        skin_vertices(model.skin_weights, transforms, rest_verts, rest_joints), LAYER_SKIN
    )
    skeleton_mesh = None
    if with_skeleton:
        if model.skeleton_weights is None:
            raise MissingLayerError(f"model {model.name!r} has no skeleton layer")
        skeleton_mesh = Mesh(
            skin_vertices(
                model.skeleton_weights, transforms, model.template_skeleton, rest_joints
            ),
            LAYER_SKELETON,
        )
    keypoints = JointSet3D(model.keypoint_regressor @ skin_mesh.vertices)
    return PosedBody(
        skin=skin_mesh,
        joints=transforms[:, :3, 3],
        keypoints=keypoints,
        skeleton=skeleton_mesh,
    )


def clamp_pose(model: BodyModel, values: np.ndarray) -> np.ndarray:
    """Clip pose angles to the per-DOF limits (no-op for unlimited axes)."""
    limits = model.dof_limits
    return np.clip(values, limits[:, 0], limits[:, 1])
