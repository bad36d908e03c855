"""Magnetic field profiles b(x), their primitive a(x) and the inverse of a.

Three families are supported:

* ``Constant``: b is a positive constant (Landau case).
* ``ModelPowerTail``: b(x) = b_plus - c * x**(-M) for x >= x0, joined to the
  constant b_minus on the left by a C-infinity monotone bridge on [-x0, x0].
* ``UserTable``: monotone samples of b, interpolated with a shape preserving
  cubic and extended by constants.

The vector potential is normalized by a(0) = 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from ._jet import Jet, smooth_step
from .errors import ConfigError, NumericalFailure, UnsupportedOrderError

MAX_ORDER = 4
A_TOL = 1e-12
_GL_ORDER = 20
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)
_GL2_NODES, _GL2_WEIGHTS = np.polynomial.legendre.leggauss(2 * _GL_ORDER)


class FieldKind(str, Enum):
    CONSTANT = "Constant"
    MODEL = "ModelPowerTail"
    TABLE = "UserTable"


@dataclass(frozen=True)
class Bridge:
    """Knots of the smooth transition used by the model family.

    ``theta`` rises from 0 at ``left`` to 1 at ``right``.  ``s_floor`` and
    ``right`` delimit the smoothed ``max(x, x0)`` that keeps ``x**-M`` finite.
    """

    left: float
    right: float
    s_floor: float


@dataclass(frozen=True, eq=False)
class MagneticProfile:
    kind: FieldKind
    b_minus: float
    b_plus: float
    M: float = 0.0
    c: float = 0.0
    x0: float = 0.0
    bridge: Bridge | None = None
    table_x: tuple[float, ...] = field(default=(), repr=False)
    table_b: tuple[float, ...] = field(default=(), repr=False)

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, b: float) -> "MagneticProfile":
        b = float(b)
        if not np.isfinite(b) or b <= 0:
            raise ConfigError(f"constant field must be positive, got {b}")
        return cls(FieldKind.CONSTANT, b, b)

    @classmethod
    def model(cls, b_minus: float, b_plus: float, M: float, c: float = 1.0,
              x0: float = 2.0) -> "MagneticProfile":
        b_minus, b_plus, M, c, x0 = map(float, (b_minus, b_plus, M, c, x0))
        if not (0 < b_minus < b_plus):
            raise ConfigError("need 0 < b_minus < b_plus")
        if M <= 0 or c <= 0 or x0 <= 0:
            raise ConfigError("M, c and x0 must be positive")
        # the tail must already exceed b_minus where it starts
        x_crit = (c / (b_plus - b_minus)) ** (1.0 / M)
        if x_crit >= x0:
            raise ConfigError(
                f"b_plus - c*x0**-M = {b_plus - c * x0 ** -M:.6g} does not exceed b_minus;"
                " increase x0 or decrease c")
        s_floor = max(0.5 * x0, 0.5 * (x_crit + x0))
        prof = cls(FieldKind.MODEL, b_minus, b_plus, M, c, x0, Bridge(-x0, x0, s_floor))
        prof._check_monotone()
        return prof

    @classmethod
    def table(cls, x, b) -> "MagneticProfile":
        x = np.asarray(x, dtype=float)
        b = np.asarray(b, dtype=float)
        if x.ndim != 1 or x.shape != b.shape or x.size < 2:
            raise ConfigError("table needs matching 1D x and b arrays with >= 2 points")
        if np.any(np.diff(x) <= 0):
            raise ConfigError("table x must be strictly increasing")
        if np.any(np.diff(b) <= 0) or b[0] <= 0:
            raise ConfigError("table b must be positive and strictly increasing")
        return cls(FieldKind.TABLE, float(b[0]), float(b[-1]),
                   table_x=tuple(x), table_b=tuple(b))

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "MagneticProfile":
        if not isinstance(cfg, dict) or "kind" not in cfg:
            raise ConfigError("profile block must be an object with a 'kind' key")
        kind = cfg["kind"]
        try:
            if kind == FieldKind.CONSTANT.value:
                value = cfg.get("b", cfg.get("b_plus", cfg.get("b_minus")))
                if value is None:
                    raise ConfigError("Constant profile needs 'b'")
                return cls.constant(value)
            if kind == FieldKind.MODEL.value:
                return cls.model(cfg["b_minus"], cfg["b_plus"], cfg["M"],
                                 cfg.get("c", 1.0), cfg.get("x0", 2.0))
            if kind == FieldKind.TABLE.value:
                return cls.table(cfg["x"], cfg["b"])
        except KeyError as exc:
            raise ConfigError(f"profile block missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad profile value: {exc}") from None
        raise ConfigError(f"unknown profile kind {kind!r}")

    def to_config(self) -> dict[str, Any]:
        if self.kind is FieldKind.CONSTANT:
            return {"kind": self.kind.value, "b": self.b_plus}
        if self.kind is FieldKind.MODEL:
            return {"kind": self.kind.value, "b_minus": self.b_minus, "b_plus": self.b_plus,
                    "M": self.M, "c": self.c, "x0": self.x0}
        return {"kind": self.kind.value, "x": list(self.table_x), "b": list(self.table_b)}

    def to_json(self) -> str:
        return json.dumps(self.to_config(), sort_keys=True)

    @property
    def is_constant(self) -> bool:
        return self.kind is FieldKind.CONSTANT

    # -- internals --------------------------------------------------------
    @cached_property
    def _pchip(self) -> PchipInterpolator:
        return PchipInterpolator(np.array(self.table_x), np.array(self.table_b), extrapolate=False)

    @cached_property
    def _pchip_primitive(self):
        return self._pchip.antiderivative()

    def _bridge_jet(self, x: np.ndarray, order: int) -> Jet:
        br = self.bridge
        theta = smooth_step(x, br.left, br.right, order)
        step = smooth_step(x, br.s_floor, br.right, order)
        xj = Jet.variable(x, order)
        s = br.s_floor + (xj - br.s_floor) * step
        inner = (self.b_plus - self.b_minus) - self.c * s.power(-self.M)
        return self.b_minus + inner * theta

    def _check_monotone(self) -> None:
        xs = np.linspace(-2 * self.x0, 4 * self.x0, 10_000)
        db = eval_b(self, xs, 1)
        bs = eval_b(self, xs, 0)
        # exp(-1/s) underflows near the left end of the step, where b is flat to machine precision
        bridge = (xs > self.bridge.left + 0.1 * self.x0) & (xs < 3 * self.x0)
        if np.any(db < 0) or np.any(db[bridge] <= 0) or np.any(bs > self.b_plus):
            raise ConfigError("bridge is not monotone for these parameters")

    @cached_property
    def _panels(self) -> tuple[np.ndarray, np.ndarray]:
        """Adaptive Gauss-Legendre panels of the bridge with cumulative integrals from -x0."""
        br = self.bridge
        done: list[tuple[float, float, float]] = []
        stack = [(br.left, br.right)]
        while stack:
            lo, hi = stack.pop()
            coarse = _gl_integral(self, lo, hi, _GL_NODES, _GL_WEIGHTS)
            fine = _gl_integral(self, lo, hi, _GL2_NODES, _GL2_WEIGHTS)
            if abs(fine - coarse) <= 1e-3 * A_TOL * (hi - lo) / (br.right - br.left) or hi - lo < 1e-6:
                done.append((lo, hi, fine))
            else:
                mid = 0.5 * (lo + hi)
                stack.extend([(mid, hi), (lo, mid)])
        done.sort()
        edges = np.array([d[0] for d in done] + [done[-1][1]])
        cum = np.concatenate([[0.0], np.cumsum([d[2] for d in done])])
        return edges, cum

    @cached_property
    def _a_offsets(self) -> tuple[float, float]:
        """a(-x0) and a(x0) under the normalization a(0) = 0."""
        edges, cum = self._panels
        a_at_zero = _cumulative_bridge(self, np.array([0.0]), edges, cum)[0]
        return -a_at_zero, cum[-1] - a_at_zero


def _gl_integral(prof: MagneticProfile, lo: float, hi: float, nodes, weights) -> float:
    half = 0.5 * (hi - lo)
    xs = lo + half * (nodes + 1.0)
    return float(half * np.dot(weights, eval_b(prof, xs, 0)))


def _cumulative_bridge(prof: MagneticProfile, x: np.ndarray, edges, cum) -> np.ndarray:
    """Integral of b from the bridge start to each x (x inside the bridge)."""
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    lo = edges[idx]
    half = 0.5 * (x - lo)
    nodes = lo[:, None] + half[:, None] * (_GL2_NODES[None, :] + 1.0)
    vals = eval_b(prof, nodes.ravel(), 0).reshape(nodes.shape)
    return cum[idx] + half * (vals @ _GL2_WEIGHTS)


def eval_b(profile: MagneticProfile, x, p: int = 0):
    """p-th derivative of the field at x (scalar or array), p <= 4."""
    if not (0 <= p <= MAX_ORDER) or int(p) != p:
        raise UnsupportedOrderError(f"derivative order {p} not supported (max {MAX_ORDER})")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if profile.kind is FieldKind.CONSTANT:
        out = np.full(x.shape, profile.b_plus if p == 0 else 0.0)
    elif profile.kind is FieldKind.TABLE:
        tx = profile.table_x
        out = np.zeros(x.shape)
        inside = (x >= tx[0]) & (x <= tx[-1])
        if p <= 3:
            out[inside] = profile._pchip(x[inside], nu=p)
        if p == 0:
            out[x < tx[0]] = profile.b_minus
            out[x > tx[-1]] = profile.b_plus
    else:
        out = np.empty(x.shape)
        tail = x >= profile.x0
        left = x <= profile.bridge.left
        mid = ~(tail | left)
        xt = x[tail]
        if p == 0:
            out[tail] = profile.b_plus - profile.c * xt ** (-profile.M)
        else:
            # d^p/dx^p of -c x^-M = -c (-M)(-M-1)...(-M-p+1) x^(-M-p)
            fall = np.prod([-profile.M - j for j in range(p)])
            out[tail] = -profile.c * fall * xt ** (-profile.M - p)
        out[left] = profile.b_minus if p == 0 else 0.0
        if np.any(mid):
            out[mid] = profile._bridge_jet(x[mid], p).derivatives()[p]
    return float(out[0]) if scalar else out


def _table_primitive(profile: MagneticProfile, x: np.ndarray) -> np.ndarray:
    """Integral of the extended table field from the first knot to x."""
    tx0, tx1 = profile.table_x[0], profile.table_x[-1]
    prim = profile._pchip_primitive
    inner = prim(np.clip(x, tx0, tx1))
    return inner + profile.b_minus * np.minimum(x - tx0, 0.0) \
        + profile.b_plus * np.maximum(x - tx1, 0.0)


def eval_a(profile: MagneticProfile, x):
    """Primitive a(x) = integral of b from 0 to x."""
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if profile.kind is FieldKind.CONSTANT:
        out = profile.b_plus * x
    elif profile.kind is FieldKind.TABLE:
        out = _table_primitive(profile, x) - _table_primitive(profile, np.array([0.0]))[0]
    else:
        a_left, a_right = profile._a_offsets
        x0, M, c, bp = profile.x0, profile.M, profile.c, profile.b_plus
        out = np.empty(x.shape)
        left = x <= profile.bridge.left
        tail = x >= x0
        mid = ~(left | tail)
        out[left] = a_left + profile.b_minus * (x[left] - profile.bridge.left)
        xt = x[tail]
        if M == 1.0:
            out[tail] = a_right + bp * (xt - x0) - c * np.log(xt / x0)
        else:
            out[tail] = a_right + bp * (xt - x0) + c * (xt ** (1 - M) - x0 ** (1 - M)) / (M - 1)
        if np.any(mid):
            edges, cum = profile._panels
            out[mid] = a_left + _cumulative_bridge(profile, x[mid], edges, cum)
    return float(out[0]) if scalar else out


def eval_deficit(profile: MagneticProfile, x):
    """b_plus - b(x), in closed form on the power tail so that it keeps relative accuracy."""
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = profile.b_plus - eval_b(profile, x, 0)
    if profile.kind is FieldKind.MODEL:
        tail = x >= profile.x0
        out[tail] = profile.c * x[tail] ** (-profile.M)
    return float(out[0]) if scalar else out


def invert_a(profile: MagneticProfile, k: float, max_iter: int = 60) -> float:
    """x_k with a(x_k) = k, by Newton from k/b_plus with a bisection fallback."""
    k = float(k)
    tol = 1e-11 * (1.0 + abs(k))
    if profile.kind is FieldKind.CONSTANT:
        return k / profile.b_plus
    lo = min(k / profile.b_plus, k / profile.b_minus) - 1.0
    hi = max(k / profile.b_plus, k / profile.b_minus) + 1.0
    if profile.kind is FieldKind.TABLE:
        # constant extensions make the bracket depend on where 0 sits
        lo -= abs(profile.table_x[0]) + abs(profile.table_x[-1])
        hi += abs(profile.table_x[0]) + abs(profile.table_x[-1])
    x = k / profile.b_plus
    for _ in range(max_iter):
        r = eval_a(profile, x) - k
        if abs(r) <= 0.1 * tol:
            return x
        x_new = x - r / eval_b(profile, x, 0)
        if not (lo <= x_new <= hi):
            break
        x = x_new
    try:
        root = brentq(lambda s: eval_a(profile, s) - k, lo, hi, xtol=1e-15, rtol=4e-16, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise NumericalFailure(f"inverting a at k={k} failed: {exc}") from None
    if abs(eval_a(profile, root) - k) > tol:
        raise NumericalFailure(f"inverting a at k={k} did not reach tolerance")
    return float(root)


def harmonic_length(profile: MagneticProfile, k: float) -> float:
    """b_k**-1/2, the natural length scale of the fiber ground state."""
    return eval_b(profile, invert_a(profile, k), 0) ** -0.5
