"""Full-perspective pinhole projection and the weak-perspective lift.

Camera extrinsics are factored as a dimensionless scale ``s`` plus in-plane
offsets ``(t_x, t_y)``; :func:`lift_extrinsics` turns the triple into a full
3-D translation with depth ``t_z = 2 f_x / (s * crop_size)``, the standard
crop-based convention. Image axes: u right, v down, origin top-left; the
camera looks along +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dual
from .errors import BehindCameraError, ConfigError
from .model import JointSet2D, JointSet3D

DEFAULT_CROP_SIZE = 256


@dataclass(frozen=True)
class Intrinsics:
    f_x: float
    f_y: float
    c_x: float
    c_y: float
    image_w: int
    image_h: int

    def __post_init__(self):
        if self.f_x <= 0 or self.f_y <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ConfigError("image dimensions must be positive")


@dataclass(frozen=True)
class Extrinsics:
    """Weak-perspective triple; lift to a full translation via the intrinsics."""

    s: float
    t_x: float
    t_y: float

    def __post_init__(self):
        if not self.s > 0:
            raise ConfigError(f"extrinsic scale must be positive, got {self.s}")
        if not (math.isfinite(self.t_x) and math.isfinite(self.t_y)):
            raise ConfigError("in-plane offsets must be finite")


def default_intrinsics(image_w: int, image_h: int, fov_deg: float | None = None) -> Intrinsics:
    """Heuristic intrinsics: focal from the FOV when given, else the diagonal."""
    if image_w <= 0 or image_h <= 0:
        raise ConfigError("image dimensions must be positive")
    if fov_deg is not None:
        if not 0.0 < fov_deg < 180.0:
            raise ConfigError(f"fov must lie in (0, 180) degrees, got {fov_deg}")
        f = (image_w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    else:
        f = math.hypot(image_w, image_h)
    return Intrinsics(f, f, image_w / 2.0, image_h / 2.0, image_w, image_h)


def lift_extrinsics(ext, intr: Intrinsics, crop_size: float = DEFAULT_CROP_SIZE):
    """Lift (s, t_x, t_y) to a camera translation (t_x, t_y, 2 f_x / (s crop)).

    Accepts an :class:`Extrinsics` or a raw (s, t_x, t_y) triple; the raw form
    may carry dual numbers for differentiation.
    """
    if crop_size <= 0:
        raise ConfigError("crop size must be positive")
    if isinstance(ext, Extrinsics):
        s, t_x, t_y = ext.s, ext.t_x, ext.t_y
    else:
        s, t_x, t_y = ext
    if not dual.is_dual(s) and s <= 0:
        raise ConfigError(f"extrinsic scale must be positive, got {s}")
    t_z = 2.0 * intr.f_x / (s * crop_size)
    return dual.stack([t_x, t_y, t_z])


def project_points(points, intr: Intrinsics, translation):
    """Pinhole projection of (K, 3) points; dual-friendly, no depth checks."""
    shifted = points + dual.reshape(translation, (1, 3))
    x, y, z = shifted[:, 0], shifted[:, 1], shifted[:, 2]
    u = intr.f_x * x / z + intr.c_x
    v = intr.f_y * y / z + intr.c_y
    return dual.stack([u, v], axis=-1)


def project(points: JointSet3D, intr: Intrinsics, translation) -> JointSet2D:
    """Project a joint set onto the full image plane.

    Raises :class:`BehindCameraError` naming the offending joints when any
    translated point has non-positive depth.
    """
    translation = np.asarray(translation, dtype=float)
    if translation.shape != (3,):
        raise ConfigError("translation must be a 3-vector")
    depth = points.positions[:, 2] + translation[2]
    bad = np.nonzero(depth <= 0)[0]
    if bad.size:
        raise BehindCameraError(bad.tolist())
    uv = project_points(points.positions, intr, translation)
    return JointSet2D(uv, points.visibility.copy())


def back_project(uv: np.ndarray, depth, intr: Intrinsics, translation=None) -> np.ndarray:
    """Invert the projection at known depth; returns (K, 3) camera-frame points."""
    uv = np.asarray(uv, dtype=float)
    z = np.broadcast_to(np.asarray(depth, dtype=float), uv.shape[:1])
    x = (uv[:, 0] - intr.c_x) * z / intr.f_x
    y = (uv[:, 1] - intr.c_y) * z / intr.f_y
    pts = np.stack([x, y, z], axis=-1)
    if translation is not None:
        pts = pts - np.asarray(translation, dtype=float)
    return pts
