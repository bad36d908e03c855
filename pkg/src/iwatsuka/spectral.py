"""Electric potentials, semiclassical volumes and effective counting near band thresholds.

Conventions
-----------
* ``N0(lam, V) = (1/2pi) |{(x, y): V > lam, x > 0}|``.
* The field-weighted volume carries the same 1/2pi, so that it reduces to
  ``b_plus * N0`` for a constant field.
* ``Q_V`` maps L2(k) to L2(R^2) with kernel (2pi)^{-1/2} V^{1/2} e^{iky} u_n(x, k),
  hence ``Q_V* Q_V`` has kernel
  ``(1/2pi) int Vhat(x, k - k') u_n(x, k) u_n(x, k') dx`` with
  ``Vhat(x, w) = int V(x, y) e^{iwy} dy``.
* Birman-Schwinger: an eigenvalue of H0 - sV crosses E for some s in (0, 1]
  iff T(E) = V^{1/2}(H0 - E)^{-1}V^{1/2} has an eigenvalue >= 1; for H0 + V
  the same holds for -T(E).
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .errors import ConfigError, DomainError, SpectralPositionError
from .fiber import FiberEigenpair, lower_threshold, solve_fiber, upper_threshold
from .field import MagneticProfile, eval_a, eval_b, invert_a

# sampling density used to locate the x-intervals of a superlevel set
_X_SAMPLES = 4097
# the k-window stops once sup_y V * weight drops below this fraction of the counting threshold
WINDOW_CUT = 0.05
# Birman-Schwinger support: V below this fraction of the distance from E to the spectrum is dropped
BS_CUT = 2e-3
# extra bands above E kept in the Birman-Schwinger band sum
BAND_EXTRA = 6
# eigenfunction values below this are treated as zero when forming kernel products
SUPPORT_TOL = 1e-12
_BLOCK = 8


class PotentialKind(str, Enum):
    RADIAL = "RadialPower"
    SEPARABLE = "Separable"
    GRID = "UserGrid"


@dataclass(frozen=True)
class Profile1D:
    """Unit-height bump used as a factor of a separable potential."""

    kind: str = "gaussian"
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "sech2"):
            raise ConfigError(f"unknown 1D profile kind {self.kind!r}")
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ConfigError("profile width must be positive")

    def __call__(self, t):
        z = (np.asarray(t, dtype=float) - self.center) / self.width
        if self.kind == "gaussian":
            return np.exp(-0.5 * z * z)
        return 1.0 / np.cosh(np.clip(z, -350.0, 350.0)) ** 2

    def extent(self, level: float) -> float:
        """Half-length of {v > level} around the center (0 if level >= 1)."""
        if level >= 1.0:
            return 0.0
        if self.kind == "gaussian":
            return self.width * math.sqrt(-2.0 * math.log(level))
        return self.width * math.acosh(1.0 / math.sqrt(level))

    def fourier(self, omega) -> np.ndarray:
        """int v(y) e^{i omega y} dy by the trapezoid rule on a truncated line.

        The step is fine enough that the first aliased copy sits beyond
        2 pi (|omega| + 1), where the transform of either bump is negligible.
        """
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        half = self.extent(1e-18)
        step = min(self.width / 8.0, 1.0 / (float(np.max(np.abs(omega))) + 1.0))
        count = int(math.ceil(2 * half / step)) + 1
        y = np.linspace(self.center - half, self.center + half, count)
        h = y[1] - y[0]
        v = self(y) * h
        v[0] *= 0.5
        v[-1] *= 0.5
        out = np.empty(omega.shape, dtype=complex)
        for start in range(0, omega.size, 256):
            chunk = omega[start:start + 256]
            out[start:start + 256] = np.exp(1j * np.outer(chunk, y)) @ v
        return out

    def to_config(self) -> dict[str, Any]:
        return {"kind": self.kind, "center": self.center, "width": self.width}


@dataclass(frozen=True, eq=False)
class Potential:
    """Nonnegative electric potential V(x, y) with V <= C <x, y>^{-m}."""

    kind: PotentialKind
    m: float
    amplitude: float
    components: tuple[Profile1D, ...] = ()
    grid_x: np.ndarray | None = field(default=None, repr=False)
    grid_y: np.ndarray | None = field(default=None, repr=False)
    grid_values: np.ndarray | None = field(default=None, repr=False)
    bound: float = 0.0

    # -- construction -----------------------------------------------------
    @classmethod
    def radial(cls, amplitude: float, m: float) -> "Potential":
        """V = amplitude * <x, y>^{-m}; amplitude 0 gives the zero potential."""
        amplitude, m = float(amplitude), float(m)
        _check_common(amplitude, m)
        return cls(PotentialKind.RADIAL, m, amplitude, bound=amplitude)

    @classmethod
    def zero(cls) -> "Potential":
        return cls.radial(0.0, 4.0)

    @classmethod
    def separable(cls, amplitude: float, vx: Profile1D, vy: Profile1D, m: float = 4.0) -> "Potential":
        amplitude, m = float(amplitude), float(m)
        _check_common(amplitude, m)
        pot = cls(PotentialKind.SEPARABLE, m, amplitude, components=(vx, vy))
        object.__setattr__(pot, "bound", _numeric_bound(pot))
        return pot

    @classmethod
    def grid(cls, x, y, values, m: float = 4.0) -> "Potential":
        """Bilinear interpolation of samples on a rectilinear grid; zero outside it."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        values = np.asarray(values, dtype=float)
        if x.ndim != 1 or y.ndim != 1 or values.shape != (x.size, y.size) or x.size < 2 or y.size < 2:
            raise ConfigError("grid potential needs 1D x, y and values of shape (len(x), len(y))")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ConfigError("grid coordinates must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ConfigError("grid potential must be finite and nonnegative")
        _check_common(1.0, float(m))
        xx, yy = np.meshgrid(x, y, indexing="ij")
        bound = float(np.max(values * (1.0 + xx**2 + yy**2) ** (0.5 * m)))
        return cls(PotentialKind.GRID, float(m), float(values.max()), grid_x=x, grid_y=y,
                   grid_values=values, bound=bound)

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "Potential":
        if not isinstance(cfg, dict) or "kind" not in cfg:
            raise ConfigError("potential block must be an object with a 'kind' key")
        kind = cfg["kind"]
        try:
            if kind == PotentialKind.RADIAL.value:
                return cls.radial(cfg["amplitude"], cfg["m"])
            if kind == PotentialKind.SEPARABLE.value:
                comps = cfg["components"]
                if len(comps) != 2:
                    raise ConfigError("Separable needs exactly two components")
                vx, vy = (Profile1D(**c) for c in comps)
                return cls.separable(cfg["amplitude"], vx, vy, cfg.get("m", 4.0))
            if kind == PotentialKind.GRID.value:
                return cls.grid(cfg["x"], cfg["y"], cfg["values"], cfg.get("m", 4.0))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"incomplete potential block: {exc}") from exc
        raise ConfigError(f"unknown potential kind {kind!r}")

    def to_config(self) -> dict[str, Any]:
        if self.kind is PotentialKind.RADIAL:
            return {"kind": self.kind.value, "amplitude": self.amplitude, "m": self.m}
        if self.kind is PotentialKind.SEPARABLE:
            return {"kind": self.kind.value, "amplitude": self.amplitude, "m": self.m,
                    "components": [c.to_config() for c in self.components]}
        return {"kind": self.kind.value, "m": self.m, "x": self.grid_x.tolist(),
                "y": self.grid_y.tolist(), "values": self.grid_values.tolist()}

    # -- evaluation -------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.kind is PotentialKind.RADIAL:
            return self.amplitude * (1.0 + x * x + y * y) ** (-0.5 * self.m)
        if self.kind is PotentialKind.SEPARABLE:
            vx, vy = self.components
            return self.amplitude * vx(x) * vy(y)
        interp = RegularGridInterpolator((self.grid_x, self.grid_y), self.grid_values,
                                         bounds_error=False, fill_value=0.0)
        pts = np.stack([x.ravel(), y.ravel()], axis=-1)
        return interp(pts).reshape(x.shape)

    def y_peak(self, x):
        """A y maximizing V(x, .) (the y-sections of the analytic families are unimodal)."""
        x = np.asarray(x, dtype=float)
        if self.kind is PotentialKind.RADIAL:
            return np.zeros_like(x)
        if self.kind is PotentialKind.SEPARABLE:
            return np.full_like(x, self.components[1].center)
        raise DomainError("y_peak is defined for the analytic families only")

    def extent(self, level: float) -> tuple[float, float, float]:
        """Bounding box (x_lo, x_hi, y_half) of {V > level}; y_half is measured from y_peak."""
        if level >= self.amplitude or self.is_zero:
            return 0.0, 0.0, 0.0
        if self.kind is PotentialKind.RADIAL:
            r = math.sqrt(max((self.amplitude / level) ** (2.0 / self.m) - 1.0, 0.0))
            return -r, r, r
        if self.kind is PotentialKind.SEPARABLE:
            vx, vy = self.components
            rel = level / self.amplitude
            hx = vx.extent(rel)
            return vx.center - hx, vx.center + hx, vy.extent(rel)
        mask = self.grid_values > level
        if not mask.any():
            return 0.0, 0.0, 0.0
        xs = self.grid_x[np.any(mask, axis=1)]
        ys = self.grid_y[np.any(mask, axis=0)]
        return float(xs[0]), float(xs[-1]), float(max(abs(ys[0]), abs(ys[-1])))

    def fourier_y(self, x, omega) -> np.ndarray:
        """Vhat(x, omega) = int V(x, y) e^{i omega y} dy, shape (len(omega), len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        if self.is_zero:
            return np.zeros((omega.size, x.size))
        if self.kind is PotentialKind.RADIAL:
            return self.amplitude * _radial_fourier(self.m, np.sqrt(1.0 + x * x)[None, :],
                                                    np.abs(omega)[:, None])
        if self.kind is PotentialKind.SEPARABLE:
            vx, vy = self.components
            vh = vy.fourier(omega)
            if np.all(vh.imag == 0) or vy.center == 0.0:
                vh = vh.real
            return self.amplitude * np.outer(vh, vx(x))
        # trapezoid in y on the user nodes, V(x, .) linear in x between columns
        cols = np.stack([np.interp(x, self.grid_x, self.grid_values[:, j], left=0.0, right=0.0)
                         for j in range(self.grid_y.size)], axis=1)
        wy = np.zeros(self.grid_y.size)
        dy = np.diff(self.grid_y)
        wy[:-1] += 0.5 * dy
        wy[1:] += 0.5 * dy
        phase = np.exp(1j * np.outer(omega, self.grid_y)) * wy
        return phase @ cols.T


def _check_common(amplitude: float, m: float) -> None:
    if not math.isfinite(amplitude) or amplitude < 0:
        raise ConfigError("potential amplitude must be finite and >= 0")
    if not math.isfinite(m) or m <= 2:
        raise ConfigError("decay exponent m must exceed 2")


def _numeric_bound(pot: Potential) -> float:
    """sup V <x, y>^m for a separable potential, by sampling and a local polish."""
    vx, vy = pot.components
    hx = vx.extent(1e-30) + abs(vx.center)
    hy = vy.extent(1e-30) + abs(vy.center)
    xs = np.linspace(-hx, hx, 401)
    ys = np.linspace(-hy, hy, 401)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")

    def g(x, y):
        return pot(x, y) * (1.0 + x * x + y * y) ** (0.5 * pot.m)

    vals = g(xx, yy)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    res = optimize.minimize(lambda p: -float(g(p[0], p[1])), [xs[i], ys[j]], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14})
    return float(max(vals.max(), -res.fun)) * (1.0 + 1e-9)


def _radial_fourier(m: float, rho, w):
    """int (rho^2 + y^2)^{-m/2} e^{iwy} dy = 2 sqrt(pi)/Gamma(m/2) (w/2rho)^nu K_nu(rho w), nu = (m-1)/2."""
    nu = 0.5 * (m - 1.0)
    rho, w = np.broadcast_arrays(rho, w)
    out = np.empty(rho.shape)
    zero = w == 0
    out[zero] = math.sqrt(math.pi) * math.exp(special.gammaln(nu) - special.gammaln(0.5 * m)) \
        * rho[zero] ** (1.0 - m)
    z = rho[~zero] * w[~zero]
    with np.errstate(under="ignore"):
        out[~zero] = (2.0 * math.sqrt(math.pi) / special.gamma(0.5 * m)) \
            * (w[~zero] / (2.0 * rho[~zero])) ** nu * special.kv(nu, z)
    return out


# -- semiclassical volumes -------------------------------------------------

def _chord(pot: Potential, x: float, lam: float) -> float:
    """Length of {y: V(x, y) > lam} for the analytic (y-unimodal) families."""
    y0 = float(pot.y_peak(x))
    if float(pot(x, y0)) <= lam:
        return 0.0
    _, _, far = pot.extent(lam)
    far = far + abs(y0) + 1.0
    if pot.kind is PotentialKind.RADIAL:
        return 2.0 * optimize.brentq(lambda y: float(pot(x, y)) - lam, 0.0, far, xtol=1e-15, rtol=1e-15)
    hi = optimize.brentq(lambda y: float(pot(x, y)) - lam, y0, y0 + far, xtol=1e-15, rtol=1e-15)
    lo = optimize.brentq(lambda y: float(pot(x, y)) - lam, y0 - far, y0, xtol=1e-15, rtol=1e-15)
    return hi - lo


def _x_intervals(pot: Potential, lam: float) -> list[tuple[float, float]]:
    """Maximal subintervals of x > 0 on which sup_y V(x, y) > lam."""
    _, x_hi, _ = pot.extent(lam)
    if x_hi <= 0.0:
        return []
    xs = np.linspace(0.0, x_hi * (1.0 + 1e-9) + 1e-9, _X_SAMPLES)
    g = pot(xs, pot.y_peak(xs)) - lam
    inside = g > 0
    out = []
    j = 0
    while j < xs.size:
        if not inside[j]:
            j += 1
            continue
        start = 0.0 if j == 0 else _root(pot, lam, xs[j - 1], xs[j])
        while j < xs.size and inside[j]:
            j += 1
        end = xs[-1] if j == xs.size else _root(pot, lam, xs[j - 1], xs[j])
        out.append((start, end))
    return out


def _root(pot: Potential, lam: float, a: float, b: float) -> float:
    return optimize.brentq(lambda x: float(pot(x, pot.y_peak(x))) - lam, a, b, xtol=1e-15, rtol=1e-15)


def _weighted_area(pot: Potential, lam: float, weight: Callable[[float], float] | None) -> float:
    total = 0.0
    for a, b in _x_intervals(pot, lam):
        half = 0.5 * (b - a)

        def integrand(theta):
            # x = a + (b - a)(1 - cos theta)/2 absorbs the square-root ends of the chord
            x = a + half * (1.0 - math.cos(theta))
            val = _chord(pot, x, lam) * half * math.sin(theta)
            return val * weight(x) if weight is not None else val

        part, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=0.0, epsrel=1e-11, limit=400)
        total += part
    return total


def _grid_area(pot: Potential, lam: float, weight: Callable[[np.ndarray], np.ndarray] | None) -> float:
    """Area of the bilinear superlevel set over x > 0: exact chords per column, trapezoid in x."""
    gx = pot.grid_x[pot.grid_x >= 0.0]
    if pot.grid_x[0] < 0.0 < pot.grid_x[-1]:
        gx = np.concatenate([[0.0], gx])
    if gx.size < 2:
        return 0.0
    xs = np.unique(np.concatenate([np.linspace(gx[j], gx[j + 1], 9) for j in range(gx.size - 1)]))
    cols = np.stack([np.interp(xs, pot.grid_x, pot.grid_values[:, j]) for j in range(pot.grid_y.size)],
                    axis=1)
    v0, v1 = cols[:, :-1] - lam, cols[:, 1:] - lam
    dy = np.diff(pot.grid_y)[None, :]
    both = (v0 > 0) & (v1 > 0)
    one = (v0 > 0) != (v1 > 0)
    frac = np.where(one, np.maximum(v0, v1) / np.where(one, np.abs(v1 - v0), 1.0), 0.0)
    chord = np.sum(dy * (both + frac), axis=1)
    if weight is not None:
        chord = chord * weight(xs)
    return float(np.trapezoid(chord, xs))


def volume_N0(potential: Potential, lam: float) -> float:
    """(1/2pi) times the area of {V > lam} within the half-plane x > 0."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if potential.is_zero:
        return 0.0
    if potential.kind is PotentialKind.GRID:
        return _grid_area(potential, lam, None) / (2.0 * math.pi)
    return _weighted_area(potential, lam, None) / (2.0 * math.pi)


def weighted_volume(potential: Potential, profile: MagneticProfile, lam: float) -> float:
    """(1/2pi) int int_{V > lam, x > 0} b(x) dx dy."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if potential.is_zero:
        return 0.0
    if potential.kind is PotentialKind.GRID:
        return _grid_area(potential, lam, lambda x: eval_b(profile, x)) / (2.0 * math.pi)
    return _weighted_area(potential, lam, lambda x: float(eval_b(profile, x))) / (2.0 * math.pi)


# -- effective kernels -----------------------------------------------------

@dataclass(frozen=True)
class SingularWeight:
    """Weight |E_n(k) - (E_top + lam)|^{-1/2} on both sides of Q_V* Q_V (gap-side spectral parameter)."""

    lam: float


@dataclass(frozen=True)
class BirmanSchwinger:
    """T(E) restricted to the bands in ``band_set``."""

    energy: float
    band_set: tuple[int, ...]


@dataclass(frozen=True)
class KWindow:
    """Uniform trapezoid nodes on [k_min, k_max]."""

    k_min: float
    k_max: float
    nodes: int

    def __post_init__(self):
        if not (self.k_max > self.k_min) or self.nodes < 2:
            raise DomainError("k-window needs k_max > k_min and at least two nodes")

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.linspace(self.k_min, self.k_max, self.nodes)
        w = np.full(self.nodes, k[1] - k[0])
        w[[0, -1]] *= 0.5
        return k, w

    def refined(self, factor: int = 2) -> "KWindow":
        return KWindow(self.k_min, self.k_max, factor * (self.nodes - 1) + 1)


@dataclass(frozen=True, eq=False)
class EffectiveKernel:
    n: int
    k_nodes: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray = field(repr=False)
    weighting: SingularWeight | BirmanSchwinger | None = None
    _eig: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues by full symmetric diagonalization (cached)."""
        if not self._eig:
            self._eig.append(np.linalg.eigvalsh(self.matrix) if self.dim else np.zeros(0))
        return self._eig[0]

    def asymmetry(self) -> float:
        scale = max(float(np.max(np.abs(self.matrix))), 1e-300) if self.dim else 1.0
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T))) / scale if self.dim else 0.0


def _solve_nodes(profile: MagneticProfile, ks: np.ndarray, n_max: int, threads: int) -> list[list[FiberEigenpair]]:
    def one(k):
        return solve_fiber(profile, float(k), n_max)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, ks))
    return [one(k) for k in ks]


def _common_x(pairs: list[list[FiberEigenpair]]) -> np.ndarray:
    lo = min(p.grid.x[0] for row in pairs for p in row)
    hi = max(p.grid.x[-1] for row in pairs for p in row)
    step = min(min(p.grid.spacing for row in pairs for p in row), 0.05)
    return np.linspace(lo, hi, int(math.ceil((hi - lo) / step)) + 1)


def _resample(pair: FiberEigenpair, x: np.ndarray) -> np.ndarray:
    gx = pair.grid.x
    out = np.zeros_like(x)
    mask = (x >= gx[0]) & (x <= gx[-1])
    out[mask] = CubicSpline(gx, pair.u)(x[mask])
    return out


def _gram_blocks(potential: Potential, ks: np.ndarray, x: np.ndarray, U: np.ndarray) -> np.ndarray:
    """(1/2pi) int Vhat(x, k_i - k_j) U_l(i, x) U_l'(j, x) dx for uniform nodes k.

    U has shape (L, N, len(x)); the result has shape (L, N, L, N).  The kernel
    depends on i - j only through Vhat, so one transform per offset suffices.
    """
    L, N, _ = U.shape
    dk = ks[1] - ks[0] if N > 1 else 0.0
    dx = x[1] - x[0]
    offsets = np.arange(N)
    vhat = potential.fourier_y(x, -offsets * dk) * (dx / (2.0 * math.pi))  # omega = k_i - k_{i+d}
    complex_kernel = np.iscomplexobj(vhat)
    out = np.zeros((L, N, L, N), dtype=complex if complex_kernel else float)
    # x-support of each node (all bands), so products are only formed where both factors live
    live = np.max(np.abs(U), axis=0) > SUPPORT_TOL
    lo = np.argmax(live, axis=1)
    hi = x.size - np.argmax(live[:, ::-1], axis=1)
    for d in offsets:
        for i0 in range(0, N - d, _BLOCK):
            i1 = min(i0 + _BLOCK, N - d)
            a = max(lo[i0:i1].min(), lo[i0 + d:i1 + d].min())
            b = min(hi[i0:i1].max(), hi[i0 + d:i1 + d].max())
            if a >= b:
                continue
            A = U[:, i0:i1, a:b] * vhat[d][None, None, a:b]
            block = np.einsum("aix,bix->abi", A, U[:, i0 + d:i1 + d, a:b])
            idx = np.arange(i0, i1)
            out[:, idx, :, idx + d] = np.transpose(block, (2, 0, 1))
            if d:
                out[:, idx + d, :, idx] = np.transpose(block.conj(), (2, 1, 0))
    return out


def auto_k_window(profile: MagneticProfile, potential: Potential, n: int, threshold: float,
                  weighting: SingularWeight | BirmanSchwinger | None = None,
                  resolution: float = 1.0) -> KWindow:
    """k-window for the counting problem at ``threshold``.

    Q_V* Q_V and its singular-weight variant live on k >= a(0) = 0, i.e. on
    momenta whose orbit centers lie in x > 0.  The window ends once
    sup_y V(x_k, y) * weight(k) is below WINDOW_CUT * threshold, plus a few
    harmonic lengths; the node spacing resolves the y-extent Y of the
    relevant superlevel set (dk = pi / (1.5 Y)).
    """
    if potential.is_zero:
        return KWindow(0.0, 1.0, 2)
    bp, bm = profile.b_plus, profile.b_minus
    if isinstance(weighting, BirmanSchwinger):
        level = BS_CUT * _spectral_distance(profile, weighting.energy)
        x_lo, x_hi, y_half = potential.extent(level)
        top = max(weighting.band_set)
        margin = (math.sqrt(2 * top + 1) + 5.0) / math.sqrt(bm)
        k_min = float(eval_a(profile, x_lo - margin))
        k_max = float(eval_a(profile, x_hi + margin))
    else:
        if isinstance(weighting, SingularWeight):
            # weight <= 1/lam everywhere and decays like 1/(Lambda_n (b_plus - b)) + lam)
            level = WINDOW_CUT * threshold * weighting.lam
        else:
            level = WINDOW_CUT * threshold
        _, x_hi, y_half = potential.extent(level)
        if isinstance(weighting, SingularWeight):
            # the weight is much smaller than 1/lam where b is far from b_plus; refine x_hi by scanning
            xs = np.linspace(0.0, max(x_hi, 1.0), 2001)
            ys = potential.y_peak(xs) if potential.kind is not PotentialKind.GRID else np.zeros_like(xs)
            gap = (2 * n - 1) * (bp - eval_b(profile, xs)) + weighting.lam
            keep = potential(xs, ys) / gap > WINDOW_CUT * threshold
            x_hi = float(xs[np.nonzero(keep)[0][-1]]) if keep.any() else 0.0
            _, _, y_half = potential.extent(WINDOW_CUT * threshold * weighting.lam)
        margin = (math.sqrt(2 * n + 1) + 4.0) / math.sqrt(bp)
        k_min = 0.0
        k_max = float(eval_a(profile, max(x_hi, 0.0) + margin))
    step = math.pi / (1.5 * max(y_half, 1.0)) / resolution
    nodes = int(math.ceil((k_max - k_min) / step)) + 1
    return KWindow(k_min, k_max, max(nodes, 2))


def _spectral_distance(profile: MagneticProfile, energy: float) -> float:
    """Distance from energy to the union of band ranges; raises if energy lies in one."""
    best = math.inf
    j = 1
    while True:
        lo, hi = lower_threshold(profile, j), upper_threshold(profile, j)
        if lo <= energy <= hi:
            raise SpectralPositionError(f"E={energy} lies in the range [{lo}, {hi}] of band {j}")
        best = min(best, abs(energy - lo), abs(energy - hi))
        if lo > energy:
            return best
        j += 1


def build_effective_kernel(profile: MagneticProfile, potential: Potential, n: int,
                           k_window: KWindow,
                           weighting: SingularWeight | BirmanSchwinger | None = None,
                           threads: int = 1) -> EffectiveKernel:
    """Nystrom matrix sqrt(w_i) K(k_i, k_j) sqrt(w_j) of the requested effective operator.

    ``weighting=None`` gives Q_V* Q_V for band n.  ``SingularWeight(lam)``
    multiplies by |E_n(k) - E_top - lam|^{-1/2} on both sides, which is the
    k-side form of S_V S_V* (same nonzero spectrum).  ``BirmanSchwinger``
    returns K^{1/2} D K^{1/2} with K the band-mixed Gram kernel and
    D = 1/(E_l(k) - E); its nonzero spectrum is that of T(E) truncated to the
    band set.
    """
    if n < 1:
        raise DomainError("band index must be >= 1")
    ks, w = k_window.points()
    if isinstance(weighting, BirmanSchwinger):
        _spectral_distance(profile, weighting.energy)
        bands = tuple(sorted(set(int(b) for b in weighting.band_set)))
        if not bands or bands[0] < 1:
            raise DomainError("band_set must list band indices >= 1")
    else:
        bands = (n,)
        if isinstance(weighting, SingularWeight) and not weighting.lam > 0:
            raise DomainError("singular weight needs lam > 0")
    size = len(bands) * ks.size
    if potential.is_zero:
        return EffectiveKernel(n, ks, w, np.zeros((size, size)), weighting)

    pairs = _solve_nodes(profile, ks, max(bands), threads)
    x = _common_x([[row[b - 1] for b in bands] for row in pairs])
    U = np.array([[_resample(row[b - 1], x) for row in pairs] for b in bands])
    energies = np.array([[row[b - 1].energy for row in pairs] for b in bands])
    G = _gram_blocks(potential, ks, x, U)
    sw = np.sqrt(w)
    G = G * sw[None, :, None, None] * sw[None, None, None, :]
    G = G.reshape(size, size)
    G = 0.5 * (G + G.conj().T)

    if weighting is None:
        mat = G
    elif isinstance(weighting, SingularWeight):
        gap = np.abs(energies[0] - upper_threshold(profile, n) - weighting.lam)
        s = 1.0 / np.sqrt(gap)
        mat = G * s[:, None] * s[None, :]
    else:
        denom = (energies - weighting.energy).ravel()
        mu, Q = np.linalg.eigh(G)
        root = (Q * np.sqrt(np.clip(mu, 0.0, None))) @ Q.conj().T
        mat = root @ (root / denom[:, None])
    mat = 0.5 * (mat + mat.conj().T)
    if np.iscomplexobj(mat) and np.max(np.abs(mat.imag)) <= 1e-14 * max(np.max(np.abs(mat.real)), 1e-300):
        mat = mat.real.copy()
    return EffectiveKernel(n, ks, w, mat, weighting)


def count_above(kernel: EffectiveKernel, threshold: float) -> int:
    """Number of eigenvalues of the discretized operator strictly above threshold."""
    return int(np.count_nonzero(kernel.eigenvalues() > threshold))


def gap_energy(profile: MagneticProfile, n: int, lam: float, sign: int) -> float:
    """E_top(n) + lam for H0 + V (sign +1), E_bottom(n) - lam for H0 - V (sign -1)."""
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    if not lam > 0:
        raise DomainError("lambda must be positive")
    return upper_threshold(profile, n) + lam if sign > 0 else lower_threshold(profile, n) - lam


def default_band_set(profile: MagneticProfile, energy: float, extra: int = BAND_EXTRA) -> tuple[int, ...]:
    """All bands below energy plus ``extra`` bands above it."""
    _spectral_distance(profile, energy)
    below = 0
    while upper_threshold(profile, below + 1) < energy:
        below += 1
    return tuple(range(1, below + extra + 1))


def birman_schwinger_kernel(profile: MagneticProfile, potential: Potential, n: int, lam: float, sign: int,
                            *, band_extra: int = BAND_EXTRA, resolution: float = 1.0,
                            threads: int = 1) -> EffectiveKernel:
    energy = gap_energy(profile, n, lam, sign)
    weighting = BirmanSchwinger(energy, default_band_set(profile, energy, band_extra))
    window = auto_k_window(profile, potential, n, 1.0, weighting, resolution)
    return build_effective_kernel(profile, potential, n, window, weighting, threads)


def gap_count(profile: MagneticProfile, potential: Potential, n: int, lam: float, sign: int = 1,
              *, band_extra: int = BAND_EXTRA, resolution: float = 1.0, threads: int = 1) -> int:
    """Eigenvalues of H0 + sign*V that cross E = gap_energy(n, lam, sign) as the coupling grows to 1.

    Counted as eigenvalues of -sign * T(E) above 1.
    """
    energy = gap_energy(profile, n, lam, sign)
    _spectral_distance(profile, energy)
    if potential.is_zero:
        return 0
    kernel = birman_schwinger_kernel(profile, potential, n, lam, sign, band_extra=band_extra,
                                     resolution=resolution, threads=threads)
    return int(np.count_nonzero(-sign * kernel.eigenvalues() > 1.0))


# -- counting experiment ---------------------------------------------------

COUNTING_COLUMNS = ("lambda", "N0", "weighted_vol", "count_eff", "count_gap", "kernel_dim")


def counting_table(profile: MagneticProfile, potential: Potential, n: int, lambdas: Sequence[float],
                   *, gap: bool = False, resolution: float = 1.0, threads: int = 1) -> list[dict]:
    """One row per lambda: volumes, the Q_V* Q_V count above lambda and optionally the gap count."""
    rows = []
    for lam in lambdas:
        lam = float(lam)
        window = auto_k_window(profile, potential, n, lam, None, resolution)
        kernel = build_effective_kernel(profile, potential, n, window, None, threads)
        row = {"lambda": lam, "N0": volume_N0(potential, lam),
               "weighted_vol": weighted_volume(potential, profile, lam),
               "count_eff": count_above(kernel, lam), "count_gap": None, "kernel_dim": kernel.dim}
        if gap:
            row["count_gap"] = gap_count(profile, potential, n, lam, 1, resolution=resolution, threads=threads)
        rows.append(row)
    return rows


def counting_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COUNTING_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in COUNTING_COLUMNS])
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
