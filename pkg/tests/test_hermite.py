import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwatsuka.errors import HermiteRangeError
from iwatsuka.hermite import (HermiteExpansion, hermite_eval, hermite_table, ladder_t, ladder_t3, moments,
                              oscillator_level)

# pi^{-1/4} to 30 digits (mpmath)
PSI1_AT_0 = 0.751125544464942482858703004776

T = np.linspace(-14.0, 14.0, 28001)
DT = T[1] - T[0]


def _inner(f, g):
    return float(np.trapezoid(f * g, T))


def test_ground_state_value():
    assert hermite_eval(1, 0.0) == pytest.approx(PSI1_AT_0, rel=1e-15)
    assert hermite_eval(2, 0.0) == 0.0


def test_normalization_psi3():
    assert _inner(hermite_eval(3, T), hermite_eval(3, T)) == pytest.approx(1.0, abs=1e-12)


def test_range_errors():
    with pytest.raises(HermiteRangeError):
        hermite_eval(31, 0.0)
    with pytest.raises(HermiteRangeError):
        hermite_eval(2, 41.0)
    with pytest.raises(HermiteRangeError):
        hermite_eval(0, 0.0)


def test_gram_matrix_identity():
    table = hermite_table(8, T)
    gram = table @ table.T * DT
    np.testing.assert_allclose(gram, np.eye(8), atol=1e-9)


def test_oscillator_eigen_relation():
    t = np.linspace(-12.0, 12.0, 24001)
    h = t[1] - t[0]
    for n in range(1, 9):
        psi = hermite_eval(n, t)
        lap = (psi[2:] - 2 * psi[1:-1] + psi[:-2]) / h**2
        res = -lap + t[1:-1] ** 2 * psi[1:-1] - oscillator_level(n) * psi[1:-1]
        # second-order stencil: the truncation error is h^2/12 psi'''' and |psi''''| <= (level + 2)^2 |psi| for these levels
        assert np.linalg.norm(res) / np.linalg.norm(psi) < h**2 * (oscillator_level(n) + 2) ** 2 / 12


def test_ladder_tables():
    assert ladder_t(1).coefficients == {2: pytest.approx(math.sqrt(0.5))}
    two = ladder_t(2).coefficients
    assert set(two) == {1, 3} and two[1] == pytest.approx(math.sqrt(0.5)) and two[3] == pytest.approx(1.0)
    one3 = ladder_t3(1).coefficients
    assert set(one3) == {2, 4}
    assert one3[2] == pytest.approx(3 / (2 * math.sqrt(2)))
    assert one3[4] == pytest.approx(math.sqrt(6) / (2 * math.sqrt(2)))
    two3 = ladder_t3(2).coefficients
    assert set(two3) == {1, 3, 5}
    assert two3[1] == pytest.approx(3 / (2 * math.sqrt(2)))
    assert two3[3] == pytest.approx(3.0)
    assert two3[5] == pytest.approx(math.sqrt(3.0))


def test_ladder_against_quadrature():
    assert _inner(T * hermite_eval(2, T), hermite_eval(3, T)) == pytest.approx(1.0, abs=1e-10)
    table = hermite_table(12, T)
    for n in range(1, 9):
        for p, ladder in ((1, ladder_t), (3, ladder_t3)):
            exp = ladder(n)
            for j in range(1, 13):
                assert _inner(T**p * table[n - 1], table[j - 1]) == pytest.approx(exp[j], abs=1e-9)


def test_moments_values():
    assert moments(1) == (0.5, 0.75)
    assert moments(2) == (1.5, 3.75)
    for n in range(1, 7):
        m2, m4 = moments(n)
        assert ladder_t(n).norm2() == pytest.approx(m2, rel=1e-14)
        assert ladder_t3(n).dot(ladder_t(n)) == pytest.approx(m4, rel=1e-14)


def test_t3_norm_against_quadrature():
    for n in range(1, 7):
        psi = hermite_eval(n, T)
        assert ladder_t3(n).norm2() == pytest.approx(_inner(T**3 * psi, T**3 * psi), abs=1e-8)


def test_expansion_invariants():
    e = HermiteExpansion({1: 0.5, 3: 0.0, 4: -2.0})
    assert 3 not in e.coefficients
    assert e.norm2() == pytest.approx(4.25)
    with pytest.raises(ValueError):
        HermiteExpansion({0: 1.0})
    summed = e + HermiteExpansion({1: -0.5})
    assert summed.coefficients == {4: -2.0}
    np.testing.assert_allclose(e.evaluate(T), 0.5 * hermite_eval(1, T) - 2.0 * hermite_eval(4, T), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.integers(1, 20), st.floats(-5, 5, allow_nan=False), max_size=6))
def test_norm_matches_quadrature_property(coeffs):
    e = HermiteExpansion(coeffs)
    v = e.evaluate(T)
    assert e.norm2() == pytest.approx(_inner(v, v), abs=1e-8 * (1 + e.norm2()))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(-40.0, 40.0))
def test_recurrence_finite_in_range(n, t):
    assert math.isfinite(hermite_eval(n, t))
