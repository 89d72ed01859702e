"""Vectorised forward-mode automatic differentiation.

A :class:`DualArray` carries a value array of shape ``S`` together with a
block of tangents of shape ``(w,) + S``: one directional derivative per seed
direction.  Keeping the seed axis first lets plain numpy broadcasting and
``@`` do the bookkeeping for elementwise ops and batched 3x3 products.

Kinematics and residual code is written once against the helpers in this
module (``sin``, ``where``, ``stack``...) and runs unchanged on ndarrays or
on duals.
"""

from __future__ import annotations

import numpy as np


class DualArray:
    __slots__ = ("val", "der")

    # numpy must defer to our reflected operators instead of broadcasting
    # the dual as an object scalar.
    __array_ufunc__ = None

    def __init__(self, val, der):
        val = np.asarray(val, dtype=float)
        der = np.asarray(der, dtype=float)
        if der.shape[1:] != val.shape:
            raise ValueError(f"tangent shape {der.shape} does not match value shape {val.shape}")
        self.val = val
        self.der = der

    @classmethod
    def seed(cls, x: np.ndarray, directions: np.ndarray) -> "DualArray":
        """Dual variable ``x`` with tangents ``directions`` of shape ``(w,) + x.shape``."""
        return cls(x, directions)

    @property
    def width(self) -> int:
        return self.der.shape[0]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"DualArray(val={self.val!r}, width={self.width})"

    # -- arithmetic -------------------------------------------------------
    def __neg__(self):
        return DualArray(-self.val, -self.der)

    def __add__(self, other):
        if isinstance(other, DualArray):
            val = self.val + other.val
            return DualArray(val, _lift(self.der, val.ndim) + _lift(other.der, val.ndim))
        val = self.val + np.asarray(other, dtype=float)
        der = np.broadcast_to(_lift(self.der, val.ndim), (self.width,) + val.shape)
        return DualArray(val, der)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, DualArray):
            val = self.val * other.val
            nd = val.ndim
            return DualArray(val, _lift(self.der, nd) * other.val + self.val * _lift(other.der, nd))
        other = np.asarray(other, dtype=float)
        val = self.val * other
        return DualArray(val, _lift(self.der, val.ndim) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualArray):
            inv = 1.0 / other.val
            val = self.val * inv
            nd = val.ndim
            return DualArray(val, (_lift(self.der, nd) - val * _lift(other.der, nd)) * inv)
        other = np.asarray(other, dtype=float)
        val = self.val / other
        return DualArray(val, _lift(self.der, val.ndim) / other)

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        inv = 1.0 / self.val
        val = other * inv
        return DualArray(val, _lift(self.der, val.ndim) * (-val * inv))

    def __pow__(self, p):
        if isinstance(p, DualArray):
            raise TypeError("dual exponents are not supported")
        if p == 2:
            return self * self
        return DualArray(self.val**p, p * self.val ** (p - 1) * self.der)

    def __matmul__(self, other):
        if isinstance(other, DualArray):
            val = self.val @ other.val
            nd = val.ndim
            return DualArray(val, _lift(self.der, nd) @ other.val + _left_matmul(self.val, other.der, nd))
        other = np.asarray(other, dtype=float)
        val = self.val @ other
        return DualArray(val, _lift(self.der, val.ndim) @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        val = other @ self.val
        return DualArray(val, _left_matmul(other, self.der, val.ndim))

    # -- indexing and shape ----------------------------------------------
    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return DualArray(self.val[key], self.der[(slice(None),) + key])

    def __setitem__(self, key, value):
        if not isinstance(key, tuple):
            key = (key,)
        if isinstance(value, DualArray):
            self.val[key] = value.val
            self.der[(slice(None),) + key] = value.der
        else:
            self.val[key] = value
            self.der[(slice(None),) + key] = 0.0

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        val = self.val.reshape(shape)
        return DualArray(val, self.der.reshape((self.width,) + val.shape))

    def sum(self, axis=None, keepdims=False):
        if axis is None:
            axis = tuple(range(-self.ndim, 0))
        axes = np.atleast_1d(axis)
        der_axes = tuple(int(a) if a < 0 else int(a) + 1 for a in axes)
        return DualArray(
            self.val.sum(axis=tuple(int(a) for a in axes), keepdims=keepdims),
            self.der.sum(axis=der_axes, keepdims=keepdims),
        )

    def swapaxes(self, a: int, b: int):
        if a < 0 and b < 0:
            return DualArray(self.val.swapaxes(a, b), self.der.swapaxes(a, b))
        raise ValueError("only negative axes are supported")

    @property
    def mT(self):
        return self.swapaxes(-1, -2)


def is_dual(x) -> bool:
    return isinstance(x, DualArray)


def value(x):
    """Primal part of ``x`` (identity on ndarrays)."""
    return x.val if isinstance(x, DualArray) else np.asarray(x)


def sin(x):
    if isinstance(x, DualArray):
        return DualArray(np.sin(x.val), np.cos(x.val) * x.der)
    return np.sin(x)


def cos(x):
    if isinstance(x, DualArray):
        return DualArray(np.cos(x.val), -np.sin(x.val) * x.der)
    return np.cos(x)


def sqrt(x):
    if isinstance(x, DualArray):
        s = np.sqrt(x.val)
        return DualArray(s, x.der * (0.5 / s))
    return np.sqrt(x)


def norm(x, axis=-1):
    """Euclidean norm along ``axis``; the tangent is undefined at zero."""
    return sqrt((x * x).sum(axis=axis))


def where(cond, a, b):
    if not (isinstance(a, DualArray) or isinstance(b, DualArray)):
        return np.where(cond, a, b)
    w = a.width if isinstance(a, DualArray) else b.width
    av, ad = _parts(a, w)
    bv, bd = _parts(b, w)
    val = np.where(cond, av, bv)
    return DualArray(val, np.where(cond, _lift(ad, val.ndim), _lift(bd, val.ndim)))


def stack(items, axis=-1):
    """``np.stack`` for any mix of duals and arrays (``axis`` must be negative)."""
    if axis >= 0:
        raise ValueError("use a negative axis")
    duals = [x for x in items if isinstance(x, DualArray)]
    if not duals:
        return np.stack(items, axis=axis)
    w = duals[0].width
    parts = [_parts(x, w) for x in items]
    shape = np.broadcast_shapes(*(p[0].shape for p in parts))
    vals = [np.broadcast_to(v, shape) for v, _ in parts]
    ders = [np.broadcast_to(_lift(d, len(shape)), (w,) + shape) for _, d in parts]
    return DualArray(np.stack(vals, axis=axis), np.stack(ders, axis=axis))


def concatenate(items, axis=-1):
    if axis >= 0:
        raise ValueError("use a negative axis")
    duals = [x for x in items if isinstance(x, DualArray)]
    if not duals:
        return np.concatenate(items, axis=axis)
    w = duals[0].width
    parts = [_parts(x, w) for x in items]
    return DualArray(
        np.concatenate([v for v, _ in parts], axis=axis),
        np.concatenate([d for _, d in parts], axis=axis),
    )


def zeros(shape, like=None):
    """Writable zeros, dual when ``like`` is dual."""
    if isinstance(like, DualArray):
        return DualArray(np.zeros(shape), np.zeros((like.width,) + tuple(shape)))
    return np.zeros(shape)


def _parts(x, w):
    if isinstance(x, DualArray):
        return x.val, x.der
    v = np.asarray(x, dtype=float)
    return v, np.zeros((w,) + v.shape)


def _left_matmul(a, der, nd):
    """Tangent of ``a @ x`` given the tangent ``der`` of ``x`` (seed axis first)."""
    if der.ndim == 2:
        # x is a vector: keep it a column so the seed axis stays leading
        return np.einsum("...mn,wn->w...m", a, der) if a.ndim >= 2 else der @ a
    return a @ _lift(der, nd)


def _lift(der, ndim):
    """Insert singleton axes after the seed axis so ``der`` has ``ndim + 1`` dims."""
    extra = ndim - (der.ndim - 1)
    if extra <= 0:
        return der
    return der.reshape((der.shape[0],) + (1,) * extra + der.shape[1:])
