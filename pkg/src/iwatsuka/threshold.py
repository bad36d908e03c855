"""Current bounds and localization of band states with energy just below an upper threshold."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .fiber import FiberEigenpair, fh_derivative, lower_threshold, rho_inverse, solve_fiber, upper_threshold
from .field import MagneticProfile
from .quasimode import epsilon_bound

SAMPLES_PER_DECADE = 64
TAIL_FRACTION = 1e-3
MAX_TAIL_SAMPLES = 64


@dataclass(frozen=True)
class EnergyWindow:
    """Energies (E_top - delta1, E_top - delta2) below the n-th upper threshold.

    ``delta2 = 0`` denotes the one-sided window (E_top - delta1, E_top).
    """

    n: int
    delta1: float
    delta2: float = 0.0

    def validate(self, profile: MagneticProfile) -> None:
        if self.n < 1:
            raise DomainError("band index must be >= 1")
        if self.delta1 == self.delta2:
            raise DomainError("degenerate window: delta1 == delta2")
        if not (self.delta1 > self.delta2 >= 0.0):
            raise DomainError("need delta1 > delta2 >= 0")
        top = upper_threshold(profile, self.n)
        lo, hi = top - self.delta1, top - self.delta2
        if lo <= lower_threshold(profile, self.n):
            raise DomainError("window leaves the band range")
        for j in range(1, self.n + 3):
            for level in (lower_threshold(profile, j), upper_threshold(profile, j)):
                if lo < level < hi:
                    raise DomainError(f"window straddles the threshold {level}")


@dataclass(frozen=True)
class LocalizationReport:
    delta: float
    k_minus: float
    x_delta: float
    r_n: float
    mass_left: float


def beta_constant(profile: MagneticProfile, n: int) -> float:
    """b_plus (Lambda_n c)^{1/M} / M, the scale of the current near the threshold."""
    return profile.b_plus * ((2 * n - 1) * profile.c) ** (1.0 / profile.M) / profile.M


def rho_leading(profile: MagneticProfile, n: int, delta: float) -> float:
    """Leading behavior b_plus (Lambda_n c / delta)^{1/M} of the inverse band gap."""
    return profile.b_plus * ((2 * n - 1) * profile.c / delta) ** (1.0 / profile.M)


def current_bounds(profile: MagneticProfile, window: EnergyWindow,
                   samples_per_decade: int = SAMPLES_PER_DECADE) -> tuple[float, float]:
    """(inf, sup) of E_n' over the momenta whose energy lies in the window."""
    window.validate(profile)
    n = window.n
    k_lo = rho_inverse(profile, n, window.delta1)
    if window.delta2 > 0:
        k_hi = rho_inverse(profile, n, window.delta2)
        decades = math.log10(window.delta1 / window.delta2)
    else:
        # E_n' -> 0 as k -> infinity, so the infimum over the open-ended window is 0
        k_hi = 10.0 * k_lo
        decades = 1.0
    count = max(2, int(math.ceil(samples_per_decade * decades))) + 1
    ks = np.geomspace(k_lo, k_hi, count) if k_lo > 0 else np.linspace(k_lo, k_hi, count)
    slopes = np.array([fh_derivative(solve_fiber(profile, k, n)[n - 1]) for k in ks])
    lower = 0.0 if window.delta2 == 0 else float(slopes.min())
    return lower, float(slopes.max())


def mass_below(pair: FiberEigenpair, x_cut: float) -> float:
    """Integral of u^2 over (-inf, x_cut] by the trapezoid rule on the pair's grid."""
    x = pair.grid.x
    if x_cut <= x[0]:
        return 0.0
    if x_cut >= x[-1]:
        return float(np.clip(np.trapezoid(pair.u**2, x), 0.0, 1.0))
    j = int(np.searchsorted(x, x_cut))
    u2 = pair.u**2
    end = np.interp(x_cut, x[j - 1:j + 1], u2[j - 1:j + 1])
    inner = np.trapezoid(u2[:j], x[:j]) + 0.5 * (u2[j - 1] + end) * (x_cut - x[j - 1])
    return float(np.clip(inner, 0.0, 1.0))


def localization_mass(profile: MagneticProfile, n: int, delta: float, nu: float = 1.5,
                      samples_per_decade: int = SAMPLES_PER_DECADE) -> LocalizationReport:
    """Largest eigenfunction mass left of x(delta) among momenta with energy in (E_top - delta, E_top)."""
    if nu <= 1.0:
        raise DomainError("nu must exceed 1")
    if profile.is_constant or profile.M <= 0:
        raise DomainError("localization needs a field with a power tail")
    k_minus = rho_inverse(profile, n, delta)
    if k_minus <= 0:
        raise DomainError(f"delta={delta} too large: its preimage k={k_minus:.3g} is not in the tail regime")
    step = 10.0 ** (1.0 / samples_per_decade)
    ks = k_minus * step ** np.arange(MAX_TAIL_SAMPLES)

    # r_n: sup of the remainder over the preimage, truncated once it has decayed
    r_n = 0.0
    for k in ks:
        eps = epsilon_bound(profile, k).epsilon_k
        r_n = max(r_n, eps)
        if eps < TAIL_FRACTION * r_n:
            break
    first = solve_fiber(profile, k_minus, n)[n - 1]
    x_delta = first.grid.center - nu / profile.b_plus * math.sqrt(abs(math.log(r_n)))

    mass = 0.0
    for k in ks:
        pair = first if k == k_minus else solve_fiber(profile, k, n)[n - 1]
        m = mass_below(pair, x_delta)
        mass = max(mass, m)
        if m <= TAIL_FRACTION * mass:
            break
    return LocalizationReport(delta=float(delta), k_minus=k_minus, x_delta=x_delta, r_n=r_n,
                              mass_left=float(min(max(mass, 0.0), 1.0)))


def threshold_report(profile: MagneticProfile, n: int, deltas, nu: float = 1.5) -> list[dict]:
    """Rows delta, k_minus, x_delta, r_n, mass_left, current_lo, current_hi over the one-sided windows."""
    rows = []
    for d in deltas:
        rep = localization_mass(profile, n, d, nu)
        lo, hi = current_bounds(profile, EnergyWindow(n, d, 0.0))
        rows.append({"delta": rep.delta, "k_minus": rep.k_minus, "x_delta": rep.x_delta,
                     "r_n": rep.r_n, "mass_left": rep.mass_left, "current_lo": lo, "current_hi": hi})
    return rows


def report_csv(rows: list[dict]) -> str:
    names = ["delta", "k_minus", "x_delta", "r_n", "mass_left", "current_lo", "current_hi"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([repr(float(row[name])) for name in names])
    return buf.getvalue()
