"""Vectorized forward-mode automatic differentiation.

A :class:`Dual` carries a value array together with a stack of tangent
arrays, one per seeded direction, so a single forward pass yields the full
gradient of a scalar objective with respect to every seeded parameter.
Plain numpy arrays and scalars mix freely with duals and are treated as
constants. The helper functions in this module (``sin``, ``matmul``,
``stack``, ...) dispatch on type, so numeric code written against them runs
unchanged on floats and on duals.
"""

from __future__ import annotations

import numpy as np


def _pad_dot(dot: np.ndarray, val_ndim: int, target_ndim: int) -> np.ndarray:
    """Insert singleton axes after the tangent axis so broadcasting aligns."""
    pad = target_ndim - val_ndim
    if pad <= 0:
        return dot
    return dot.reshape(dot.shape[:1] + (1,) * pad + dot.shape[1:])


class Dual:
    """Value plus directional derivatives: ``dot[k]`` is d(val)/d(direction k)."""

    __slots__ = ("val", "dot")
    __array_ufunc__ = None  # force numpy to defer to the reflected operators

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=float)
        self.dot = np.asarray(dot, dtype=float)
        if self.dot.shape[1:] != self.val.shape:
            raise ValueError(
                f"tangent shape {self.dot.shape} does not extend value shape {self.val.shape}"
            )

    @property
    def ndir(self) -> int:
        return self.dot.shape[0]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    def __repr__(self):
        return f"Dual(val={self.val!r}, ndir={self.ndir})"

    def _grow(self, val):
        """Tangent stack padded and broadcast to match a new value shape."""
        dot = _pad_dot(self.dot, self.val.ndim, val.ndim)
        target = (self.ndir,) + val.shape
        return dot if dot.shape == target else np.broadcast_to(dot, target)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            val = self.val + other.val
            return Dual(val, self._grow(val) + other._grow(val))
        val = self.val + np.asarray(other, dtype=float)
        return Dual(val, self._grow(val))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            val = self.val - other.val
            return Dual(val, self._grow(val) - other._grow(val))
        val = self.val - np.asarray(other, dtype=float)
        return Dual(val, self._grow(val))

    def __rsub__(self, other):
        val = np.asarray(other, dtype=float) - self.val
        return Dual(val, -self._grow(val))

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            val = self.val * other.val
            dot = _pad_dot(self.dot, self.val.ndim, val.ndim) * other.val
            dot = dot + self.val * _pad_dot(other.dot, other.val.ndim, val.ndim)
            return Dual(val, dot)
        other = np.asarray(other, dtype=float)
        val = self.val * other
        return Dual(val, _pad_dot(self.dot, self.val.ndim, val.ndim) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            val = self.val / other.val
            dot = _pad_dot(self.dot, self.val.ndim, val.ndim)
            dot = (dot - val * _pad_dot(other.dot, other.val.ndim, val.ndim)) / other.val
            return Dual(val, dot)
        other = np.asarray(other, dtype=float)
        val = self.val / other
        return Dual(val, _pad_dot(self.dot, self.val.ndim, val.ndim) / other)

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        val = other / self.val
        dot = -(val / self.val) * _pad_dot(self.dot, self.val.ndim, val.ndim)
        return Dual(val, dot)

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")
        return Dual(self.val**p, p * self.val ** (p - 1) * self.dot)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # -- structure ----------------------------------------------------------

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Dual(self.val[key], self.dot[(slice(None),) + key])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        val = self.val.reshape(shape)
        return Dual(val, self.dot.reshape((self.ndir,) + val.shape))

    def sum(self, axis=None):
        return sum_(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)


def seed(values: np.ndarray) -> Dual:
    """Seed a 1-D parameter vector with one unit tangent per entry."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("seed expects a 1-D parameter vector")
    return Dual(values, np.eye(values.size))


def seed_directions(values: np.ndarray, directions: np.ndarray) -> Dual:
    """Seed with explicit tangent directions, shape (ndir, len(values))."""
    return Dual(values, np.asarray(directions, dtype=float))


def value(x):
    """Value part of a dual, or the input itself for plain arrays."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def tangent(x):
    return x.dot if isinstance(x, Dual) else None


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def _ndir(items):
    for x in items:
        if isinstance(x, Dual):
            return x.ndir
    return None


def _promote(x, ndir):
    if isinstance(x, Dual):
        return x
    x = np.asarray(x, dtype=float)
    return Dual(x, np.zeros((ndir,) + x.shape))


def _binary_parts(a, b):
    """Promote, broadcast values, and align both tangent stacks."""
    n = _ndir((a, b))
    a, b = _promote(a, n), _promote(b, n)
    vshape = np.broadcast_shapes(a.val.shape, b.val.shape)
    nd = len(vshape)
    av = np.broadcast_to(a.val, vshape)
    bv = np.broadcast_to(b.val, vshape)
    ad = np.broadcast_to(_pad_dot(a.dot, a.val.ndim, nd), (n,) + vshape)
    bd = np.broadcast_to(_pad_dot(b.dot, b.val.ndim, nd), (n,) + vshape)
    return av, bv, ad, bd


# -- elementwise functions ---------------------------------------------------


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val) * x.dot)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val) * x.dot)
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        val = np.sqrt(x.val)
        return Dual(val, x.dot / (2.0 * val))
    return np.sqrt(x)


def absolute(x):
    """|x| with subgradient 0 at the kink."""
    if isinstance(x, Dual):
        return Dual(np.abs(x.val), np.sign(x.val) * x.dot)
    return np.abs(x)


def maximum(a, b):
    """Elementwise max; the derivative follows the winning branch (ties -> a)."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.maximum(a, b)
    av, bv, ad, bd = _binary_parts(a, b)
    mask = av >= bv
    return Dual(np.where(mask, av, bv), np.where(mask, ad, bd))


def minimum(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.minimum(a, b)
    av, bv, ad, bd = _binary_parts(a, b)
    mask = av <= bv
    return Dual(np.where(mask, av, bv), np.where(mask, ad, bd))


def where(cond, a, b):
    cond = np.asarray(cond)
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(cond, a, b)
    av, bv, ad, bd = _binary_parts(a, b)
    return Dual(np.where(cond, av, bv), np.where(cond, ad, bd))


def clip(x, lo, hi):
    """Clamp with zero derivative outside the active range."""
    if not isinstance(x, Dual):
        return np.clip(x, lo, hi)
    return maximum(minimum(x, hi), lo)


# -- reductions ---------------------------------------------------------------


def sum_(x, axis=None):
    if not isinstance(x, Dual):
        return np.sum(x, axis=axis)
    if axis is None:
        return Dual(np.sum(x.val), np.sum(x.dot, axis=tuple(range(1, x.dot.ndim))))
    axes = axis if isinstance(axis, tuple) else (axis,)
    dot_axes = tuple(a % x.val.ndim + 1 for a in axes)
    return Dual(np.sum(x.val, axis=axis), np.sum(x.dot, axis=dot_axes))


def mean(x, axis=None):
    if not isinstance(x, Dual):
        return np.mean(x, axis=axis)
    if axis is None:
        count = x.val.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.val.shape[a] for a in axes]))
    s = sum_(x, axis=axis)
    return Dual(s.val / count, s.dot / count)


# -- structural ----------------------------------------------------------------


def stack(items, axis=0):
    items = list(items)
    n = _ndir(items)
    if n is None:
        return np.stack(items, axis=axis)
    items = [_promote(x, n) for x in items]
    val = np.stack([x.val for x in items], axis=axis)
    dot_axis = axis + 1 if axis >= 0 else axis
    dot = np.stack([x.dot for x in items], axis=dot_axis)
    return Dual(val, dot)


def concatenate(items, axis=0):
    items = list(items)
    n = _ndir(items)
    if n is None:
        return np.concatenate(items, axis=axis)
    items = [_promote(x, n) for x in items]
    val = np.concatenate([x.val for x in items], axis=axis)
    dot_axis = axis + 1 if axis >= 0 else axis
    dot = np.concatenate([x.dot for x in items], axis=dot_axis)
    return Dual(val, dot)


def reshape(x, shape):
    if isinstance(x, Dual):
        return x.reshape(shape)
    return np.reshape(x, shape)


def matmul(a, b):
    """Matrix product with the product rule; accepts any dual/constant mix.

    1-D operands follow numpy's vector promotion rules. Stacked (batched)
    matmul broadcasts the tangent axis like any other leading axis.
    """
    a_dual, b_dual = isinstance(a, Dual), isinstance(b, Dual)
    if not a_dual and not b_dual:
        return np.matmul(a, b)
    av = a.val if a_dual else np.asarray(a, dtype=float)
    bv = b.val if b_dual else np.asarray(b, dtype=float)
    sq_a, sq_b = av.ndim == 1, bv.ndim == 1
    if sq_a:
        av = av[None, :]
    if sq_b:
        bv = bv[:, None]
    val = np.matmul(av, bv)
    dot = None
    if a_dual:
        ad = a.dot[:, None, :] if sq_a else _pad_dot(a.dot, a.val.ndim, val.ndim)
        dot = np.matmul(ad, bv)
    if b_dual:
        bd = b.dot[:, :, None] if sq_b else _pad_dot(b.dot, b.val.ndim, val.ndim)
        term = np.matmul(av, bd)
        dot = term if dot is None else dot + term
    if sq_b:
        val, dot = val[..., 0], dot[..., 0]
        if sq_a:
            val, dot = val[..., 0], dot[..., 0]
    elif sq_a:
        val, dot = val[..., 0, :], dot[..., 0, :]
    return Dual(val, dot)
