import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwatsuka.errors import ConfigError, UnsupportedOrderError
from iwatsuka.field import MagneticProfile, eval_a, eval_b, eval_deficit, invert_a

# a(10) for (b-=1, b+=2, M=2, c=1, x0=2): scipy quad of eval_b over [0, 10] with the
# bridge knots as break points, epsabs=epsrel=1e-14
A_AT_10 = 18.597733273782726
# a(x) = 25 solved by 80 bisection steps on the quad-based primitive
X_AT_25 = 13.213292681603402


def test_constant_values():
    one = MagneticProfile.constant(1.0)
    two = MagneticProfile.constant(2.0)
    assert eval_b(one, 3.7) == 1.0
    assert eval_a(two, 2.0) == pytest.approx(4.0, abs=1e-15)
    assert eval_a(one, 0.0) == 0.0
    assert invert_a(two, 4.0) == pytest.approx(2.0, abs=1e-12)
    assert invert_a(one, -3.0) == pytest.approx(-3.0, abs=1e-12)


def test_tail_values(model_m2):
    assert eval_b(model_m2, 10.0) == pytest.approx(1.99, abs=1e-15)
    assert eval_b(model_m2, 10.0, 1) == pytest.approx(0.002, rel=1e-14)
    assert eval_deficit(model_m2, 10.0) == pytest.approx(0.01, rel=1e-15)


def test_primitive_matches_quadrature_oracle(model_m2):
    assert eval_a(model_m2, 10.0) == pytest.approx(A_AT_10, abs=1e-10)
    assert eval_a(model_m2, 0.0) == 0.0


def test_inverse_matches_bisection_oracle(model_m2):
    assert invert_a(model_m2, 25.0) == pytest.approx(X_AT_25, abs=1e-10)


def test_order_limit(model_m2):
    with pytest.raises(UnsupportedOrderError):
        eval_b(model_m2, 1.0, 5)


def test_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        MagneticProfile.model(2.0, 1.0, 2.0)
    with pytest.raises(ConfigError):
        MagneticProfile.constant(-1.0)
    with pytest.raises(ConfigError):
        MagneticProfile.from_config({"kind": "ModelPowerTail", "b_minus": 1})


def test_monotone_on_dense_grid(model_m2):
    x = np.linspace(-10.0, 40.0, 10_000)
    b = eval_b(model_m2, x)
    a = eval_a(model_m2, x)
    assert np.all(np.diff(b) >= 0)
    assert np.all(np.diff(a) > 0)
    assert np.all((b >= 1.0) & (b < 2.0))
    inner = (x > -2.0 + 0.2) & (x < 40.0)
    assert np.all(np.diff(b[inner]) > 0)


def test_tail_derivative_chain(model_m2):
    x = np.linspace(3.0, 50.0, 200)
    exact = [2.0 - x**-2.0, 2.0 * x**-3.0, -6.0 * x**-4.0, 24.0 * x**-5.0, -120.0 * x**-6.0]
    for p, ref in enumerate(exact):
        np.testing.assert_allclose(eval_b(model_m2, x, p), ref, rtol=1e-13)


def test_bridge_derivatives_match_finite_differences(model_m2):
    x = np.linspace(-1.7, 2.5, 23)
    h = 1e-4
    for p in range(1, 5):
        fd = (eval_b(model_m2, x + h, p - 1) - eval_b(model_m2, x - h, p - 1)) / (2 * h)
        np.testing.assert_allclose(eval_b(model_m2, x, p), fd, rtol=2e-5, atol=1e-5)


def test_field_ratio_decays_on_tail(model_m2):
    x = np.geomspace(3.0, 300.0, 40)
    ratio = eval_b(model_m2, x, 1) / eval_deficit(model_m2, x)
    assert np.all(np.diff(ratio) < 0)
    np.testing.assert_allclose(ratio * x, 2.0, rtol=1e-12)


def test_config_round_trip(model_m2):
    again = MagneticProfile.from_config(model_m2.to_config())
    xs = np.linspace(-3, 5, 17)
    np.testing.assert_array_equal(eval_b(again, xs), eval_b(model_m2, xs))


def test_table_profile_interpolates():
    x = np.linspace(-5, 5, 41)
    b = 1.5 + 0.4 * np.tanh(x)
    prof = MagneticProfile.table(x, b)
    assert eval_b(prof, 0.0) == pytest.approx(1.5, abs=1e-12)
    quad = np.trapezoid(1.5 + 0.4 * np.tanh(np.linspace(0, 2, 20001)), np.linspace(0, 2, 20001))
    assert eval_a(prof, 2.0) == pytest.approx(quad, rel=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-50.0, max_value=500.0))
def test_round_trip_property(k):
    prof = MagneticProfile.model(1.0, 2.0, 2.0, 1.0, 2.0)
    x = invert_a(prof, k)
    assert abs(eval_a(prof, x) - k) <= 1e-10 * max(1.0, abs(k))


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-40.0, max_value=400.0), st.floats(min_value=1e-3, max_value=50.0))
def test_inverse_monotone_property(k, dk):
    prof = MagneticProfile.model(1.0, 2.0, 2.0, 1.0, 2.0)
    assert invert_a(prof, k) < invert_a(prof, k + dk)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.5, max_value=4.0), st.floats(min_value=-20.0, max_value=20.0))
def test_constant_primitive_property(b, x):
    prof = MagneticProfile.constant(b)
    assert eval_a(prof, x) == pytest.approx(b * x, abs=1e-12 * (1 + abs(b * x)))
    assert math.isclose(invert_a(prof, b * x), x, abs_tol=1e-11 * (1 + abs(x)))
