"""Anatomically constrained parametric body models and fitting tools."""

from .camera import Extrinsics, Intrinsics, default_intrinsics, lift_extrinsics, project
from .cascade import CascadeTrace, Evidence, coarse_init, factorization_probe, refine_stage, run_cascade
from .fitting import fit_model_to_mesh, mesh_distance
from .losses import (
    LossWeights,
    Prediction,
    Supervision,
    combined_loss,
    keypoint_loss,
    pose_shape_loss,
    refinement_loss,
    total_loss,
)
from .metrics import (
    SimilarityTransform,
    mpjpe,
    pa_mpjpe,
    pck,
    procrustes_align,
    pve,
    subset_middle_half,
)
from .model import (
    BodyModel,
    DofSpec,
    JointSet2D,
    JointSet3D,
    Mesh,
    PoseVector,
    ShapeVector,
    forward_kinematics,
    pose_body,
    pose_to_rotations,
    regress_keypoints,
    shape_blend,
    skin,
)
from .modelfile import load_model, save_model
from .optim import FitSchedule, FitStage, default_schedule, gradient, minimize
from .params import ParamSet, zero_params
from .rotations import axis_angle_to_euler, axis_angle_to_matrix, euler_to_matrix, matrix_to_euler
from .toy import TOY_PRESETS, ToySpec, gen_toy_model

__version__ = "0.1.0"
