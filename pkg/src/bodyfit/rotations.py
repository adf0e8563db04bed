"""Rotation conversions: single-axis matrices, axis-angle, Euler factorization.

Euler angles throughout the toolkit are intrinsic: for a declared axis order
``"XYZ"`` with angles ``(a, b, c)`` the rotation is ``Rx(a) @ Ry(b) @ Rz(c)``,
each rotation taken about the already-rotated frame.
"""

from __future__ import annotations

import numpy as np

from . import dual
from .errors import ConfigError

_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}
_EVEN_ORDERS = {"XYZ", "YZX", "ZXY"}


def validate_axis_order(order: str, *, full: bool = False) -> str:
    order = order.upper()
    if not (1 <= len(order) <= 3) or any(ch not in _AXIS_INDEX for ch in order):
        raise ConfigError(f"axis order must be 1-3 letters from XYZ, got {order!r}")
    if len(set(order)) != len(order):
        raise ConfigError(f"axis order must not repeat axes, got {order!r}")
    if full and len(order) != 3:
        raise ConfigError(f"a full 3-axis order is required, got {order!r}")
    return order


def axis_rotation(axis, angle):
    """Rotation matrix about a principal axis; works on floats and duals."""
    if isinstance(axis, str):
        axis = _AXIS_INDEX[axis.upper()]
    c, s = dual.cos(angle), dual.sin(angle)
    one, zero = 1.0, 0.0
    if axis == 0:
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == 1:
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    elif axis == 2:
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    else:
        raise ConfigError(f"axis must be 0, 1 or 2, got {axis}")
    return dual.stack([dual.stack(r) for r in rows])


def euler_to_matrix(angles, order: str):
    """Compose single-axis rotations in the declared (intrinsic) order."""
    order = validate_axis_order(order)
    if len(angles) != len(order):
        raise ConfigError(f"expected {len(order)} angles for order {order!r}")
    mat = axis_rotation(order[0], angles[0])
    for ch, ang in zip(order[1:], angles[1:]):
        mat = dual.matmul(mat, axis_rotation(ch, ang))
    return mat


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, stable near zero angle."""
    aa = np.asarray(aa, dtype=float)
    theta = float(np.linalg.norm(aa))
    k = skew(aa)
    if theta < 1e-8:
        # Taylor series of sin(t)/t and (1-cos(t))/t^2 on the raw skew
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def matrix_to_euler(mat: np.ndarray, order: str) -> np.ndarray:
    """Factor an orthonormal matrix into intrinsic Tait-Bryan angles.

    At gimbal lock the third angle is fixed to zero (canonical branch).
    """
    order = validate_axis_order(order, full=True)
    mat = np.asarray(mat, dtype=float)
    i, j, k = (_AXIS_INDEX[ch] for ch in order)
    eps = 1.0 if order in _EVEN_ORDERS else -1.0

    sb = float(np.clip(eps * mat[i, k], -1.0, 1.0))
    b = np.arcsin(sb)
    cb = np.sqrt(max(0.0, 1.0 - sb * sb))
    if cb > 1e-14:
        a = np.arctan2(-eps * mat[j, k], mat[k, k])
        c = np.arctan2(-eps * mat[i, j], mat[i, i])
    else:
        a = np.arctan2(eps * mat[k, j], mat[j, j])
        c = 0.0
    return np.array([a, b, c])


def axis_angle_to_euler(aa: np.ndarray, order: str) -> np.ndarray:
    """Convert an axis-angle vector to intrinsic Euler angles for ``order``."""
    return matrix_to_euler(axis_angle_to_matrix(aa), order)


def homogeneous(rot, trans):
    """Assemble a 4x4 transform from a 3x3 rotation and a 3-vector."""
    top = dual.concatenate([rot, dual.reshape(trans, (3, 1))], axis=1)
    bottom = np.array([[0.0, 0.0, 0.0, 1.0]])
    return dual.concatenate([top, bottom], axis=0)
