"""Truncated Taylor arithmetic used to differentiate the bridge of a field profile.

A jet of order ``p`` stores normalized Taylor coefficients ``f^(j)(x)/j!`` for
``j = 0..p`` along the first axis, so derivatives come out exactly (up to
rounding) without symbolic algebra or finite differences.
"""
from __future__ import annotations

import math

import numpy as np


class Jet:
    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    @classmethod
    def variable(cls, x, order: int) -> "Jet":
        x = np.asarray(x, dtype=float)
        c = np.zeros((order + 1,) + x.shape)
        c[0] = x
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value, like: "Jet") -> "Jet":
        c = np.zeros_like(like.c)
        c[0] = value
        return cls(c)

    def derivatives(self) -> np.ndarray:
        fac = np.array([math.factorial(j) for j in range(self.order + 1)], dtype=float)
        return self.c * fac.reshape((-1,) + (1,) * (self.c.ndim - 1))

    def _lift(self, other) -> "Jet":
        return other if isinstance(other, Jet) else Jet.constant(other, self)

    def __add__(self, other):
        other = self._lift(other)
        return Jet(self.c + other.c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * other)
        p = self.order
        out = np.zeros(np.broadcast_shapes(self.c.shape, other.c.shape))
        for k in range(p + 1):
            for j in range(k + 1):
                out[k] += self.c[j] * other.c[k - j]
        return Jet(out)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        f = self.c
        h = np.zeros_like(f)
        h[0] = 1.0 / f[0]
        for k in range(1, self.order + 1):
            acc = np.zeros_like(f[0])
            for j in range(1, k + 1):
                acc += f[j] * h[k - j]
            h[k] = -acc * h[0]
        return Jet(h)

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self._lift(other) * self.reciprocal()

    def exp(self) -> "Jet":
        f = self.c
        g = np.zeros_like(f)
        g[0] = np.exp(f[0])
        for k in range(1, self.order + 1):
            acc = np.zeros_like(f[0])
            for j in range(1, k + 1):
                acc += j * f[j] * g[k - j]
            g[k] = acc / k
        return Jet(g)

    def power(self, alpha: float) -> "Jet":
        """``f**alpha`` for a jet with positive value."""
        f = self.c
        g = np.zeros_like(f)
        g[0] = f[0] ** alpha
        for k in range(1, self.order + 1):
            acc = np.zeros_like(f[0])
            for j in range(1, k + 1):
                acc += ((alpha + 1.0) * j - k) * f[j] * g[k - j]
            g[k] = acc / (k * f[0])
        return Jet(g)

    def where(self, mask, other: "Jet") -> "Jet":
        """Take self where ``mask`` is true, ``other`` elsewhere."""
        return Jet(np.where(mask, self.c, other.c))


def smooth_step(x, left: float, right: float, order: int) -> Jet:
    """C-infinity step from 0 (x <= left) to 1 (x >= right), as a jet in x.

    Built from ``f(s) = exp(-1/s)`` via ``f(s) / (f(s) + f(1 - s))``.
    """
    x = np.asarray(x, dtype=float)
    width = right - left
    s = (x - left) / width
    inside = (s > 1e-3) & (s < 1.0 - 1e-3)
    # evaluate on a safe surrogate outside the support; results are masked out
    s_safe = np.where(inside, s, 0.5)
    sj = Jet.variable(s_safe, order) * 1.0
    sj.c[1:] /= width ** np.arange(1, order + 1).reshape((-1,) + (1,) * s.ndim)
    f_left = (-sj.reciprocal()).exp()
    f_right = (-(1.0 - sj).reciprocal()).exp()
    theta = f_left / (f_left + f_right)
    outside = np.zeros((order + 1,) + s.shape)
    # exp(-1000) underflows: the step is exactly 0 or 1 with flat derivatives there
    outside[0] = np.where(s >= 0.5, 1.0, 0.0)
    return theta.where(inside, Jet(outside))
