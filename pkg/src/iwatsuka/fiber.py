"""Fiber operators h(k) = -d^2/dx^2 + (a(x) - k)^2: eigenpairs, band tables, band derivatives.

Two discretizations are available, both on the scale of the harmonic length
b_k^{-1/2} around x_k = a^{-1}(k):

* ``"galerkin"``: Hermite basis in t = b_k^{1/2}(x - x_k), where
  h(k)/b_k = diag(2j - 1) + P with P = <(w - t^2) Psi_i, Psi_j> small.  The
  offset E - b_k(2n - 1) comes from a Rayleigh quotient that never forms the
  large diagonal, so it keeps relative accuracy even when it is 1e-12.
  Convergence is certified by two basis sizes.
* ``"fd"``: second-order finite differences with Dirichlet ends, energies
  Romberg-extrapolated over spacings h, h/2, h/4.  Rounding limits it to
  roughly 1e-11 absolute; it serves as an independent cross-check.

The default ``"auto"`` tries the basis method and falls back to finite
differences where the basis does not converge (x_k inside the bridge).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.special import roots_hermite
from scipy.optimize import brentq

from .errors import DegenerateBandError, DomainError, GridFailure, NumericalFailure
from .field import MagneticProfile, eval_a, eval_b, eval_deficit, invert_a
from .hermite import hermite_eval, hermite_rows

HALF_WIDTH = 12.0
POINTS_PER_LENGTH = 16
REL_TOL = 1e-8
MAX_REFINE = 3
MAX_EXPAND = 8
BASIS_START = 40
BASIS_STEP = 24
BASIS_MAX = 260
# in "auto" mode a basis that has not converged by this size hands over to finite differences
BASIS_MAX_AUTO = 136
# absolute agreement between consecutive basis sizes, relative to b_k
BASIS_TOL = 1e-13


def lower_threshold(profile: MagneticProfile, n: int) -> float:
    return profile.b_minus * (2 * n - 1)


def upper_threshold(profile: MagneticProfile, n: int) -> float:
    return profile.b_plus * (2 * n - 1)


@dataclass(frozen=True)
class FiberGrid:
    center: float
    half_width: float  # in harmonic lengths
    points: int
    spacing: float

    @property
    def length_scale(self) -> float:
        return self.spacing * (self.points - 1) / (2.0 * self.half_width)

    @property
    def x(self) -> np.ndarray:
        half = 0.5 * self.spacing * (self.points - 1)
        return np.linspace(self.center - half, self.center + half, self.points)


@dataclass(frozen=True, eq=False)
class FiberEigenpair:
    n: int
    k: float
    energy: float
    u: np.ndarray = field(repr=False)
    grid: FiberGrid
    error_estimate: float = 0.0
    profile: MagneticProfile | None = field(default=None, repr=False)
    fh: float | None = None
    b_k: float = 1.0
    level_shift: float = 0.0  # energy - b_k (2n - 1), computed without cancellation
    method: str = "galerkin"

    @property
    def threshold_gap(self) -> float:
        """upper_threshold - energy = (2n - 1)(b_plus - b_k) - level_shift."""
        if self.profile is None:
            raise ValueError("pair carries no profile")
        deficit = eval_deficit(self.profile, self.grid.center)
        return (2 * self.n - 1) * deficit - self.level_shift


@dataclass(frozen=True)
class BandTable:
    n: int
    k_values: np.ndarray
    energies: np.ndarray
    fh_derivatives: np.ndarray
    second_derivatives: np.ndarray
    grid_points: np.ndarray
    half_widths: np.ndarray
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"n": self.n, "k": float(k), "E": float(e), "dE": float(d1), "d2E": float(d2),
             "grid_points": int(gp), "half_width": float(hw)}
            for k, e, d1, d2, gp, hw in zip(self.k_values, self.energies, self.fh_derivatives,
                                            self.second_derivatives, self.grid_points,
                                            self.half_widths)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["n", "k", "E", "dE", "d2E", "grid_points", "half_width"],
                                lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in row.items()})
        return buf.getvalue()


def _romberg(values: Sequence[float]) -> tuple[float, float]:
    """Two-stage Richardson for an O(h^2) sequence at h, h/2, h/4 -> (value, spread)."""
    e0, e1, e2 = values
    r0 = (4.0 * e1 - e0) / 3.0
    r1 = (4.0 * e2 - e1) / 3.0
    return (16.0 * r1 - r0) / 15.0, abs(r1 - r0)


def _solve_level(profile, k, center, lo, hi, points, n_max):
    x = np.linspace(lo, hi, points)
    h = x[1] - x[0]
    shift = eval_a(profile, x[1:-1]) - k
    diag = 2.0 / h**2 + shift**2
    off = np.full(points - 3, -1.0 / h**2)
    try:
        w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, n_max - 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"tridiagonal eigensolver failed at k={k}: {exc}") from None
    v = v / math.sqrt(h)
    fh = -2.0 * h * (shift[:, None] * v**2).sum(axis=0)
    return x, w, v, fh


def _window(profile: MagneticProfile, k: float, n_max: int, half_width: float):
    """x_k, b_k and a half width (in harmonic lengths) whose ends enclose the turning points."""
    xk = invert_a(profile, k)
    bk = eval_b(profile, xk, 0)
    length = bk ** -0.5
    e_cap = upper_threshold(profile, n_max)
    margin = 60.0 * profile.b_plus
    hw = half_width
    for _ in range(MAX_EXPAND):
        ends = np.array([xk - hw * length, xk + hw * length])
        if np.all((eval_a(profile, ends) - k) ** 2 > e_cap + margin):
            return xk, bk, hw
        hw *= 1.5
    raise GridFailure(f"turning points not contained at k={k} (half width {hw:.3g})")


def _galerkin_level(profile, k, xk, bk, n_basis, n_max):
    sq = math.sqrt(bk)
    t, w = roots_hermite(n_basis + 60)
    weights = np.exp(np.log(w) + t * t)
    s = (eval_a(profile, xk + t / sq) - k) / sq
    psi = hermite_rows(n_basis, t)
    # w(t) - t^2 as a product: no cancellation when the potential is nearly harmonic
    pert = (psi * (weights * (s - t) * (s + t))) @ psi.T
    pert = 0.5 * (pert + pert.T)
    lam = 2.0 * np.arange(1, n_basis + 1) - 1.0
    _, vecs = eigh(np.diag(lam) + pert, subset_by_index=[0, n_max - 1])
    smat = (psi * (weights * s)) @ psi.T
    shifts, fhs = [], []
    for i in range(n_max):
        c = vecs[:, i] / np.linalg.norm(vecs[:, i])
        if c[i] < 0:
            c = -c
        vecs[:, i] = c
        shifts.append(bk * (np.dot(lam - lam[i], c * c) + c @ pert @ c))
        fhs.append(-2.0 * sq * (c @ smat @ c))
    return np.array(shifts), np.array(fhs), vecs


def _solve_galerkin(profile, k, n_max, points_per_length, half_width, basis_max=BASIS_MAX):
    xk, bk, hw = _window(profile, k, n_max, half_width)
    nb = max(BASIS_START, 4 * n_max + 30)
    prev = _galerkin_level(profile, k, xk, bk, nb, n_max)
    while True:
        nb += BASIS_STEP
        cur = _galerkin_level(profile, k, xk, bk, nb, n_max)
        spread = np.abs(cur[0] - prev[0])
        if np.all(spread <= BASIS_TOL * bk * (2 * np.arange(1, n_max + 1) - 1)):
            break
        if nb >= basis_max:
            raise NumericalFailure(f"Hermite basis did not converge at k={k} (spread {spread.max():.3g})")
        prev = cur
    shifts, fhs, vecs = cur
    length = bk ** -0.5
    points = int(math.ceil(2 * hw * points_per_length)) + 1
    grid = FiberGrid(center=xk, half_width=hw, points=points, spacing=2 * hw * length / (points - 1))
    t = (grid.x - xk) / length
    basis = hermite_rows(nb, t)
    pairs = []
    for i in range(n_max):
        lam = 2 * i + 1
        u = bk ** 0.25 * (vecs[:, i] @ basis)
        pairs.append(FiberEigenpair(
            n=i + 1, k=k, energy=float(bk * lam + shifts[i]), u=u, grid=grid,
            error_estimate=float(spread[i]), profile=profile, fh=float(fhs[i]), b_k=bk,
            level_shift=float(shifts[i]), method="galerkin"))
    return pairs


def _solve_fd(profile, k, n_max, points_per_length, half_width, rel_tol):
    xk, bk, hw = _window(profile, k, n_max, half_width)
    length = bk ** -0.5
    lo, hi = xk - hw * length, xk + hw * length
    ppl = points_per_length
    for _ in range(MAX_REFINE + 1):
        base = int(math.ceil(2 * hw * ppl)) + 1
        levels = [_solve_level(profile, k, xk, lo, hi, (base - 1) * 2**j + 1, n_max) for j in range(3)]
        energies = np.array([lev[1] for lev in levels])
        r0 = (4.0 * energies[1] - energies[0]) / 3.0
        r1 = (4.0 * energies[2] - energies[1]) / 3.0
        if np.all(np.abs(r1 - r0) <= rel_tol * np.abs(r1)):
            break
        ppl *= 2
    else:
        raise NumericalFailure(f"energies at k={k} not certified to {rel_tol:g}")
    x, _, vecs, _ = levels[-1]
    grid = FiberGrid(center=xk, half_width=hw, points=x.size, spacing=x[1] - x[0])
    t = (x - xk) / length
    pairs = []
    for i in range(n_max):
        energy, spread = _romberg(energies[:, i])
        fh, _ = _romberg([lev[3][i] for lev in levels])
        u = np.zeros(x.size)
        u[1:-1] = vecs[:, i]
        if np.dot(u, hermite_rows(i + 1, t)[i]) < 0:
            u = -u
        pairs.append(FiberEigenpair(
            n=i + 1, k=k, energy=float(energy), u=u, grid=grid, error_estimate=float(spread),
            profile=profile, fh=float(fh), b_k=bk, level_shift=float(energy - bk * (2 * i + 1)),
            method="fd"))
    return pairs


def solve_fiber(profile: MagneticProfile, k: float, n_max: int = 1, *, method: str = "auto",
                points_per_length: int = POINTS_PER_LENGTH, rel_tol: float = REL_TOL,
                half_width: float = HALF_WIDTH) -> list[FiberEigenpair]:
    """Lowest n_max eigenpairs of h(k), certified by two discretization levels.

    Eigenfunctions are returned on a uniform grid of ``points_per_length``
    points per harmonic length, normalized in the grid L2 norm up to
    quadrature error, and signed so that their overlap with the translated
    Hermite profile is positive.
    """
    if n_max < 1:
        raise ValueError("n_max >= 1")
    k = float(k)
    if method == "auto":
        try:
            return _solve_galerkin(profile, k, n_max, points_per_length, half_width, BASIS_MAX_AUTO)
        except NumericalFailure:
            return _solve_fd(profile, k, n_max, points_per_length, half_width, rel_tol)
    if method == "galerkin":
        return _solve_galerkin(profile, k, n_max, points_per_length, half_width)
    if method == "fd":
        return _solve_fd(profile, k, n_max, points_per_length, half_width, rel_tol)
    raise ValueError(f"unknown method {method!r}")


def fiber_energy(profile: MagneticProfile, n: int, k: float, **kw) -> float:
    return solve_fiber(profile, k, n, **kw)[n - 1].energy


def fh_derivative(pair: FiberEigenpair) -> float:
    """E_n'(k) = -2 * integral of (a(x) - k) u^2.

    Uses the quadrature native to the discretization that produced the pair
    (Gauss-Hermite for the basis method, extrapolated grid sums for finite
    differences); a bare pair falls back to the grid sum.
    """
    if pair.fh is not None:
        return pair.fh
    if pair.profile is None:
        raise ValueError("pair carries neither a derivative nor its profile")
    x = pair.grid.x
    return float(-2.0 * pair.grid.spacing * np.sum((eval_a(pair.profile, x) - pair.k) * pair.u**2))


def _fh(profile, n, k, method):
    return fh_derivative(solve_fiber(profile, k, n, method=method)[n - 1])


def band_second_derivative(profile: MagneticProfile, n: int, k: float,
                           step: float | None = None, method: str = "auto") -> float:
    """E_n''(k) by a five-point central difference of Feynman-Hellmann derivatives."""
    if profile.is_constant:
        return 0.0
    if step is None:
        # band functions vary on the scale of k in the power-law regime and O(1) near the bridge
        step = 0.02 * max(abs(k), 5.0)
    f = [_fh(profile, n, k + j * step, method) for j in (-2, -1, 1, 2)]
    return (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * step)


def band_table(profile: MagneticProfile, n: int, k_grid, *, second_derivative: bool = True,
               method: str = "auto", rel_tol: float = REL_TOL) -> BandTable:
    k_grid = np.asarray(k_grid, dtype=float)
    if np.any(np.diff(k_grid) <= 0):
        raise ValueError("k_grid must be strictly ascending")
    energies, fh, d2, points, widths = [], [], [], [], []
    for k in k_grid:
        pair = solve_fiber(profile, k, n, method=method, rel_tol=rel_tol)[n - 1]
        energies.append(pair.energy)
        fh.append(fh_derivative(pair))
        d2.append(band_second_derivative(profile, n, k, method=method) if second_derivative
                  else float("nan"))
        points.append(pair.grid.points)
        widths.append(pair.grid.half_width)
    return BandTable(n=n, k_values=k_grid, energies=np.array(energies), fh_derivatives=np.array(fh),
                     second_derivatives=np.array(d2), grid_points=np.array(points),
                     half_widths=np.array(widths),
                     metadata={"method": method, "rel_tol": rel_tol, "basis_tol": BASIS_TOL,
                               "points_per_length": POINTS_PER_LENGTH})


def rho_inverse(profile: MagneticProfile, n: int, delta: float) -> float:
    """k with upper_threshold - E_n(k) = delta (inverse of the distance to the threshold)."""
    if profile.is_constant:
        raise DegenerateBandError("band function is constant; no inverse exists")
    width = upper_threshold(profile, n) - lower_threshold(profile, n)
    if not (0.0 < delta < width):
        raise DomainError(f"delta must lie in (0, {width}), got {delta}")

    def gap(k):
        return solve_fiber(profile, k, n)[n - 1].threshold_gap - delta

    if profile.M > 0:
        guess = profile.b_plus * ((2 * n - 1) * profile.c / delta) ** (1.0 / profile.M)
    else:
        guess = 1.0
    lo, hi = 0.8 * guess, 1.25 * guess
    g_lo, g_hi = gap(lo), gap(hi)
    for _ in range(200):
        if g_lo > 0:
            break
        lo = lo - 2.0 * max(abs(lo), 1.0)
        g_lo = gap(lo)
    for _ in range(200):
        if g_hi < 0:
            break
        hi = hi + 2.0 * max(abs(hi), 1.0)
        g_hi = gap(hi)
    if not (g_lo > 0 > g_hi):
        raise NumericalFailure(f"could not bracket the preimage of delta={delta}")
    # target |gap| <= 1e-8 delta; the slope E' converts it to a tolerance on k
    slope = abs(g_lo - g_hi) / (hi - lo)
    xtol = max(1e-8 * delta / max(slope, 1e-300), 1e-12 * abs(hi))
    return float(brentq(gap, lo, hi, xtol=xtol, rtol=1e-15, maxiter=200))


def gaussian_decay(pair: FiberEigenpair) -> tuple[float, float]:
    """Fitted tau and sup of log|u| + tau (x - x_k)^2 over the grid."""
    x = pair.grid.x
    s2 = (x - pair.grid.center) ** 2
    absu = np.abs(pair.u)
    peak = absu.max()
    far = (s2 > (3.0 * pair.grid.length_scale) ** 2 * (2 * pair.n - 1)) & (absu > 1e-250 * peak)
    slope = np.polyfit(s2[far], np.log(absu[far]), 1)[0]
    tau = 0.5 * (-slope)
    with np.errstate(divide="ignore"):
        envelope = np.where(absu > 0, np.log(absu) + tau * s2, -np.inf)
    return float(tau), float(envelope.max())
