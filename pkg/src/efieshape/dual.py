"""Array-valued forward-mode dual numbers.

A :class:`Dual` carries a value array and the derivative of that array with
respect to a single scalar parameter. The module-level functions (``sqrt``,
``exp``, ``einsum``, ...) accept either plain numpy arrays or duals, so the
same numerical code runs in value mode and in derivative mode. In value mode
they call exactly the numpy routine that the dual path applies to its value
part, which keeps the two paths bit-identical.
"""

from __future__ import annotations

import numpy as np


class Dual:
    """Pair ``(val, der)`` of broadcast-compatible arrays."""

    __slots__ = ("val", "der")
    # numpy defers binary operators to our reflected methods
    __array_ufunc__ = None

    def __init__(self, val, der=None):
        self.val = np.asarray(val)
        if der is None:
            der = np.zeros_like(self.val)
        self.der = np.asarray(der)

    def __repr__(self):
        return f"Dual(val={self.val!r}, der={self.der!r})"

    @property
    def shape(self):
        if self.val.shape == self.der.shape:
            return self.val.shape
        return np.broadcast_shapes(self.val.shape, self.der.shape)

    @property
    def ndim(self):
        return len(self.shape)

    def __getitem__(self, idx):
        if self.val.shape == self.der.shape:
            return Dual(self.val[idx], self.der[idx])
        der = np.broadcast_to(self.der, self.shape)
        val = np.broadcast_to(self.val, self.shape)
        return Dual(val[idx], der[idx])

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    def __radd__(self, other):
        return Dual(other + self.val, self.der)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        return Dual(self.val - other, self.der)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.der * other.val + self.val * other.der)
        return Dual(self.val * other, self.der * other)

    def __rmul__(self, other):
        return Dual(other * self.val, other * self.der)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            val = self.val / other.val
            return Dual(val, (self.der - val * other.der) / other.val)
        return Dual(self.val / other, self.der / other)

    def __rtruediv__(self, other):
        val = other / self.val
        return Dual(val, -val * self.der / self.val)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 1:
            raise ValueError("Dual power supports positive integers only")
        out = self
        for _ in range(n - 1):
            out = out * self
        return out


def is_dual(*args) -> bool:
    return any(isinstance(a, Dual) for a in args)


def value(x):
    """Value part of ``x`` (identity on plain arrays)."""
    return x.val if isinstance(x, Dual) else x


def derivative(x):
    """Derivative part of ``x``; zeros for plain arrays."""
    if isinstance(x, Dual):
        if x.der.shape == x.val.shape:
            return x.der.copy()
        return np.broadcast_to(x.der, x.shape).copy()
    return np.zeros_like(np.asarray(x))


def sqrt(x):
    if isinstance(x, Dual):
        val = np.sqrt(x.val)
        # d|r|/ds is taken as 0 where the argument vanishes identically
        safe = np.where(val > 0, val, 1.0)
        return Dual(val, np.where(val > 0, x.der / (2.0 * safe), 0.0))
    return np.sqrt(x)


def exp(x):
    if isinstance(x, Dual):
        val = np.exp(x.val)
        return Dual(val, val * x.der)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.der / x.val)
    return np.log(x)


def arctan(x):
    if isinstance(x, Dual):
        return Dual(np.arctan(x.val), x.der / (1.0 + x.val * x.val))
    return np.arctan(x)


def absolute(x):
    if isinstance(x, Dual):
        return Dual(np.abs(x.val), np.sign(x.val) * x.der)
    return np.abs(x)


def where(cond, a, b):
    cond = value(cond)
    if is_dual(a, b):
        return Dual(np.where(cond, value(a), value(b)), np.where(cond, derivative(a), derivative(b)))
    return np.where(cond, a, b)


def einsum(subscripts, *operands):
    vals = [value(op) for op in operands]
    out = np.einsum(subscripts, *vals)
    if not is_dual(*operands):
        return out
    der = np.zeros(out.shape, dtype=np.result_type(out, *[derivative(op) for op in operands]))
    for i, op in enumerate(operands):
        if isinstance(op, Dual):
            args = list(vals)
            args[i] = derivative(op)
            der = der + np.einsum(subscripts, *args)
    return Dual(out, der)


def dsum(x, axis=None):
    if isinstance(x, Dual):
        return Dual(np.sum(x.val, axis=axis), np.sum(derivative(x), axis=axis))
    return np.sum(x, axis=axis)


def stack(arrays, axis=0):
    if is_dual(*arrays):
        shape = np.broadcast_shapes(*[np.shape(value(a)) for a in arrays])
        vals = [np.broadcast_to(value(a), shape) for a in arrays]
        ders = [np.broadcast_to(derivative(a), shape) for a in arrays]
        return Dual(np.stack(vals, axis=axis), np.stack(ders, axis=axis))
    return np.stack(arrays, axis=axis)


def expand(x, axis):
    if isinstance(x, Dual):
        return Dual(np.expand_dims(x.val, axis), np.expand_dims(derivative(x), axis))
    return np.expand_dims(x, axis)


def dot(a, b):
    """Contraction over the trailing length-3 axis."""
    return einsum("...i,...i->...", a, b)


def cross(a, b):
    c0 = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    c1 = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    c2 = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return stack([c0, c1, c2], axis=-1)


def norm(a):
    return sqrt(dot(a, a))
