"""Normalized Hermite functions, indexed from n = 1 (ground state), and their ladder identities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HermiteRangeError

N_MAX = 30
T_MAX = 40.0


def oscillator_level(n: int) -> int:
    """Eigenvalue 2n-1 of -d^2/dt^2 + t^2 on the n-th Hermite function."""
    return 2 * n - 1


@dataclass(frozen=True)
class HermiteExpansion:
    """Finite combination sum_j coefficients[j] * Psi_j with zero terms dropped."""

    coefficients: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {int(j): float(v) for j, v in self.coefficients.items() if v != 0.0}
        if any(j < 1 for j in clean):
            raise ValueError("Hermite indices start at 1")
        object.__setattr__(self, "coefficients", dict(sorted(clean.items())))

    def __getitem__(self, j: int) -> float:
        return self.coefficients.get(j, 0.0)

    def __add__(self, other: "HermiteExpansion") -> "HermiteExpansion":
        out = dict(self.coefficients)
        for j, v in other.coefficients.items():
            out[j] = out.get(j, 0.0) + v
        return HermiteExpansion(out)

    def scale(self, factor: float) -> "HermiteExpansion":
        return HermiteExpansion({j: factor * v for j, v in self.coefficients.items()})

    def norm2(self) -> float:
        return float(sum(v * v for v in self.coefficients.values()))

    def dot(self, other: "HermiteExpansion") -> float:
        return float(sum(v * other[j] for j, v in self.coefficients.items()))

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if not self.coefficients:
            return np.zeros_like(t)
        top = max(self.coefficients)
        table = hermite_table(top, t)
        out = np.zeros_like(t)
        for j, v in self.coefficients.items():
            out = out + v * table[j - 1]
        return out


def _check_range(n: int, t: np.ndarray) -> None:
    if n < 1 or n > N_MAX:
        raise HermiteRangeError(f"index {n} outside 1..{N_MAX}")
    if t.size and np.max(np.abs(t)) > T_MAX:
        raise HermiteRangeError(f"|t| exceeds {T_MAX}")


def hermite_table(n: int, t) -> np.ndarray:
    """Rows Psi_1(t) .. Psi_n(t) from the normalized three-term recurrence."""
    t = np.asarray(t, dtype=float)
    _check_range(n, t)
    return hermite_rows(n, t)


def hermite_rows(n: int, t: np.ndarray) -> np.ndarray:
    """Unchecked recurrence; used internally by basis methods that need n > 30."""
    out = np.empty((n,) + t.shape)
    out[0] = math.pi ** -0.25 * np.exp(-0.5 * t * t)
    if n > 1:
        out[1] = math.sqrt(2.0) * t * out[0]
    for j in range(2, n):
        # row j holds Psi_{j+1}; recurrence written for Psi index j
        out[j] = t * math.sqrt(2.0 / j) * out[j - 1] - math.sqrt((j - 1) / j) * out[j - 2]
    return out


def hermite_eval(n: int, t):
    """Psi_n(t), L2-normalized, for 1 <= n <= 30 and |t| <= 40."""
    scalar = np.ndim(t) == 0
    vals = hermite_table(n, np.atleast_1d(t))[n - 1]
    return float(vals[0]) if scalar else vals


def ladder_t(n: int) -> HermiteExpansion:
    """Coefficients of t * Psi_n."""
    if n < 1:
        raise ValueError("n >= 1")
    coeffs = {n + 1: math.sqrt(n / 2.0)}
    if n > 1:
        coeffs[n - 1] = math.sqrt((n - 1) / 2.0)
    return HermiteExpansion(coeffs)


def ladder_t3(n: int) -> HermiteExpansion:
    """Coefficients of t**3 * Psi_n."""
    if n < 1:
        raise ValueError("n >= 1")
    s = 2.0 ** -1.5
    coeffs = {
        n - 3: s * math.sqrt(max((n - 1) * (n - 2) * (n - 3), 0)),
        n - 1: s * 3 * (n - 1) * math.sqrt(n - 1),
        n + 1: s * 3 * n * math.sqrt(n),
        n + 3: s * math.sqrt(n * (n + 1) * (n + 2)),
    }
    return HermiteExpansion({j: v for j, v in coeffs.items() if j >= 1})


def moments(n: int) -> tuple[float, float]:
    """(<t^2 Psi_n, Psi_n>, <t^4 Psi_n, Psi_n>)."""
    if n < 1:
        raise ValueError("n >= 1")
    return (2 * n - 1) / 2.0, 0.75 * (2 * n * n - 2 * n + 1)
