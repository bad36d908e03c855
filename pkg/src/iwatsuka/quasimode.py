"""Second-order Hermite quasi-modes for the fiber operator near its potential minimum.

In the variable t = b_k^{1/2} (x - x_k) the fiber operator reads
b_k (-d^2/dt^2 + w(t)) with w(t) = t^2 + alpha1 t^3 + alpha2 t^4 + O(t^5).
Rayleigh-Schroedinger perturbation of the harmonic oscillator gives the pair
(mu0 + mu2, phi0 + phi1 + phi2) built here.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .fiber import FiberEigenpair, band_second_derivative, fh_derivative, solve_fiber
from .field import MagneticProfile, eval_a, eval_b, invert_a
from .hermite import HermiteExpansion, hermite_table, moments, oscillator_level


@dataclass(frozen=True)
class QuasiMode:
    n: int
    k: float
    mu0: float
    mu2: float
    alpha1: float
    alpha2: float
    phi: HermiteExpansion
    x_k: float = 0.0
    b_k: float = 1.0

    @property
    def quasi_energy(self) -> float:
        """b_k (mu0 + mu2), the quasi-eigenvalue of h(k)."""
        return self.b_k * (self.mu0 + self.mu2)


@dataclass(frozen=True)
class RemainderBudget:
    sigma: float
    tau: float
    epsilon_k: float


def gamma_thm(n: int) -> float:
    """Coefficient of b_k^{-1} b_k'' in the band expansion: (2n^2 - 2n + 1)/4."""
    return 0.25 * (2 * n * n - 2 * n + 1)


def moment_m4(n: int) -> float:
    """<t^4 Psi_n, Psi_n> = 3(2n^2 - 2n + 1)/4."""
    return moments(n)[1]


def expansion_coefficients(profile: MagneticProfile, k: float) -> tuple[float, float, float, float]:
    """(x_k, b_k, alpha1, alpha2) for the Taylor expansion of the scaled potential."""
    xk = invert_a(profile, k)
    b0, b1, b2 = (eval_b(profile, xk, p) for p in range(3))
    alpha1 = b0 ** -1.5 * b1
    alpha2 = 0.25 * b0 ** -3 * b1 * b1 + b0 ** -2 * b2 / 3.0
    return xk, b0, alpha1, alpha2


def phi1_coefficients(n: int, alpha1: float) -> HermiteExpansion:
    """First-order correction -(h0 - Lambda_n)^{-1}(alpha1 t^3 Psi_n)."""
    s = -alpha1 * 2.0 ** -2.5
    coeffs = {
        n - 3: -s / 3.0 * math.sqrt(max((n - 1) * (n - 2) * (n - 3), 0)),
        n - 1: -s * 3 * (n - 1) * math.sqrt(n - 1),
        n + 1: s * 3 * n * math.sqrt(n),
        n + 3: s / 3.0 * math.sqrt(n * (n + 1) * (n + 2)),
    }
    return HermiteExpansion({j: v for j, v in coeffs.items() if j >= 1})


def c_table(n: int) -> dict[int, float]:
    """Magnitude-signed table {p: c_p} for p = -2..2 as commonly printed (c_0 = 0).

    The second-order correction actually solving (h0 - Lambda_n) phi2 =
    (mu2 - w2) phi0 is ``-alpha2 * sum_p c_p Psi_{n+2p}``; see ``phi2_coefficients``.
    """
    return {
        -2: -math.sqrt(max((n - 1) * (n - 2) * (n - 3) * (n - 4), 0)) / 32.0,
        -1: -math.sqrt(max((n - 1) * (n - 2), 0)) * (4 * n - 6) / 16.0,
        0: 0.0,
        1: math.sqrt(n * (n + 1)) * (4 * n + 2) / 16.0,
        2: math.sqrt(n * (n + 1) * (n + 2) * (n + 3)) / 32.0,
    }


def phi2_coefficients(n: int, alpha2: float) -> HermiteExpansion:
    """Second-order correction (h0 - Lambda_n)^{-1}(mu2 - alpha2 t^4) Psi_n, orthogonal to Psi_n."""
    table = c_table(n)
    return HermiteExpansion({n + 2 * p: -alpha2 * c for p, c in table.items()
                             if n + 2 * p >= 1 and c != 0.0})


def build_quasimode(profile: MagneticProfile, n: int, k: float) -> QuasiMode:
    if n < 1:
        raise ValueError("n >= 1")
    xk, bk, a1, a2 = expansion_coefficients(profile, k)
    phi = HermiteExpansion({n: 1.0}) + phi1_coefficients(n, a1) + phi2_coefficients(n, a2)
    return QuasiMode(n=n, k=float(k), mu0=float(oscillator_level(n)), mu2=moment_m4(n) * a2,
                     alpha1=a1, alpha2=a2, phi=phi, x_k=xk, b_k=bk)


def _scaled_parts(profile: MagneticProfile, qm: QuasiMode, x: np.ndarray):
    """t, v_qm(t), and -v_qm''(t) evaluated exactly through the oscillator ladder."""
    t = np.sqrt(qm.b_k) * (x - qm.x_k)
    top = max(qm.phi.coefficients)
    table = hermite_table(top, np.clip(t, -40.0, 40.0))
    table[:, np.abs(t) > 40.0] = 0.0
    v = np.zeros_like(t)
    h0v = np.zeros_like(t)
    for j, cj in qm.phi.coefficients.items():
        v += cj * table[j - 1]
        h0v += cj * oscillator_level(j) * table[j - 1]
    return t, v, h0v


def quasimode_on_grid(profile: MagneticProfile, qm: QuasiMode, x: np.ndarray) -> np.ndarray:
    """u_qm(x) = b_k^{1/4} v_qm(b_k^{1/2}(x - x_k))."""
    return qm.b_k ** 0.25 * _scaled_parts(profile, qm, x)[1]


def quasimode_residual(profile: MagneticProfile, qm: QuasiMode, grid_x: np.ndarray | None = None,
                       normalized: bool = False) -> float:
    """eta = || (h(k) - b_k(mu0 + mu2)) u_qm || on the fiber grid.

    The kinetic part is applied exactly in the Hermite basis, using
    -v'' = (h0 - t^2) v, so only the potential is sampled; this keeps the
    residual free of finite-difference error, which would otherwise dominate
    it for large k.  With ``normalized`` the result is divided by ||u_qm||.
    """
    if grid_x is None:
        grid_x = solve_fiber(profile, qm.k, qm.n)[qm.n - 1].grid.x
    x = np.asarray(grid_x, dtype=float)
    t, v, h0v = _scaled_parts(profile, qm, x)
    # w(t) - t^2 written as a product to avoid cancellation
    s = (eval_a(profile, x) - qm.k) / math.sqrt(qm.b_k)
    w_minus_t2 = (s - t) * (s + t)
    r = qm.b_k ** 1.25 * (h0v + (w_minus_t2 - qm.mu0 - qm.mu2) * v)
    dx = x[1] - x[0]
    eta = math.sqrt(dx * float(np.dot(r, r)))
    if normalized:
        eta /= math.sqrt(dx * float(np.dot(v, v)) * math.sqrt(qm.b_k))
    return eta


def default_window(profile: MagneticProfile) -> tuple[float, float]:
    """Midpoints of the admissible (sigma, tau) window."""
    bp = profile.b_plus
    sigma0 = 0.5 * bp ** -0.5
    return 0.5 * (1.0 / bp - sigma0 / math.sqrt(bp)), 0.25 * sigma0 ** 2


def epsilon_bound(profile: MagneticProfile, k: float, sigma: float | None = None,
                  tau: float | None = None) -> RemainderBudget:
    """eps(k) = (b_k')^2 + sup_{x > sigma k}(|b' b''| + |b'''|) + exp(-tau k^2)."""
    d_sigma, d_tau = default_window(profile)
    sigma = d_sigma if sigma is None else float(sigma)
    tau = d_tau if tau is None else float(tau)
    bp = profile.b_plus
    # sigma0 ranges over (0, bp^-1/2); the union of windows is sigma < 1/bp, tau < 1/(2 bp)
    if not (0.0 < sigma < 1.0 / bp and 0.0 < tau < 0.5 / bp):
        raise ParameterError(f"(sigma, tau) = ({sigma}, {tau}) outside the admissible window")
    sigma0_max = min(math.sqrt(bp) * (1.0 / bp - sigma), 1.0 / math.sqrt(bp))
    if tau >= 0.5 * sigma0_max ** 2:
        raise ParameterError(f"(sigma, tau) = ({sigma}, {tau}) outside the admissible window")
    xk = invert_a(profile, k)
    eps = eval_b(profile, xk, 1) ** 2 + math.exp(-tau * k * k)
    if not profile.is_constant:
        start = sigma * k
        tail_start = getattr(profile, "x0", 0.0) if profile.M > 0 else float("inf")
        if start >= tail_start:
            # every term decreases on the power tail, so the sup sits at the left end
            sup = abs(eval_b(profile, start, 1) * eval_b(profile, start, 2)) + abs(eval_b(profile, start, 3))
        else:
            xs = np.concatenate([np.linspace(start, max(tail_start, start) + 10.0, 4001)])
            sup = float(np.max(np.abs(eval_b(profile, xs, 1) * eval_b(profile, xs, 2))
                               + np.abs(eval_b(profile, xs, 3))))
        eps += sup
    return RemainderBudget(sigma=sigma, tau=tau, epsilon_k=float(eps))


def eigenfunction_distance(profile: MagneticProfile, qm: QuasiMode, pair: FiberEigenpair) -> float:
    """|| u_n(., k) - u_qm(., k) || on the eigenpair grid."""
    x = pair.grid.x
    diff = pair.u - quasimode_on_grid(profile, qm, x)
    return math.sqrt(pair.grid.spacing * float(np.dot(diff, diff)))


@dataclass(frozen=True)
class ExpansionRow:
    k: float
    E: float
    r0: float
    r1: float
    dE_rem: float
    d2E_rem: float
    eps: float
    ratio: float


@dataclass(frozen=True)
class ExpansionTable:
    n: int
    rows: tuple[ExpansionRow, ...]

    @property
    def sup_ratio(self) -> float:
        return max(r.ratio for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = ["k", "E", "r0", "r1", "dE_rem", "d2E_rem", "eps", "ratio"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for row in self.rows:
            writer.writerow([repr(float(getattr(row, f))) for f in names])
        return buf.getvalue()


def verify_expansion(profile: MagneticProfile, n: int, k_grid, *, derivatives: bool = True) -> ExpansionTable:
    """Remainders of the three-term band expansion and of its k-derivatives."""
    lam = oscillator_level(n)
    g = gamma_thm(n)
    rows = []
    for k in np.asarray(k_grid, dtype=float):
        pair = solve_fiber(profile, k, n)[n - 1]
        xk = pair.grid.center
        b0, b1, b2 = (eval_b(profile, xk, p) for p in range(3))
        r0 = pair.energy - b0 * lam
        r1 = r0 - g * b2 / b0
        if derivatives:
            de = fh_derivative(pair) - lam * b1 / b0
            d2e = band_second_derivative(profile, n, k) - lam * b2 / b0 ** 2
        else:
            de = d2e = float("nan")
        eps = epsilon_bound(profile, k).epsilon_k
        rows.append(ExpansionRow(float(k), pair.energy, r0, r1, de, d2e, eps, abs(r1) / eps))
    return ExpansionTable(n=n, rows=tuple(rows))
