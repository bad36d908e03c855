import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwatsuka.errors import DegenerateBandError, DomainError
from iwatsuka.fiber import (band_second_derivative, band_table, fh_derivative, gaussian_decay, rho_inverse,
                            solve_fiber, upper_threshold)
from iwatsuka.field import MagneticProfile
from iwatsuka.hermite import hermite_eval

# E_1(40) of the M=2 model by finite differences (points_per_length 32 and 64, rel_tol 1e-10),
# an independent discretization from the default Hermite basis
E1_AT_40_FD = 1.9976682151350917


def test_landau_levels_at_rest():
    pairs = solve_fiber(MagneticProfile.constant(1.0), 0.0, 3)
    assert [p.energy for p in pairs] == pytest.approx([1.0, 3.0, 5.0], rel=1e-8)


def test_constant_field_is_flat():
    assert solve_fiber(MagneticProfile.constant(2.0), 7.0, 1)[0].energy == pytest.approx(2.0, rel=1e-8)


def test_model_energy_at_40(model_m2):
    e = solve_fiber(model_m2, 40.0, 1)[0].energy
    assert 1.0 < e < 2.0
    assert e == pytest.approx(E1_AT_40_FD, abs=1e-9)
    assert abs(e - (2.0 - 4.0 / 1600.0)) < 1e-3


def test_fh_against_central_difference(model_m2):
    h = 1e-3
    pair = solve_fiber(model_m2, 40.0, 1)[0]
    fd = (solve_fiber(model_m2, 40.0 + h, 1)[0].energy - solve_fiber(model_m2, 40.0 - h, 1)[0].energy) / (2 * h)
    fh = fh_derivative(pair)
    assert fh > 0
    assert fh == pytest.approx(fd, rel=1e-4)
    assert fh == pytest.approx(2 * 4 / 40.0**3, rel=0.10)


def test_fh_random_samples(model_m2):
    rng = np.random.default_rng(7)
    h = 1e-3
    for _ in range(5):
        n = int(rng.integers(1, 4))
        k = float(rng.uniform(10.0, 200.0))
        fh = fh_derivative(solve_fiber(model_m2, k, n)[n - 1])
        fd = (solve_fiber(model_m2, k + h, n)[n - 1].energy - solve_fiber(model_m2, k - h, n)[n - 1].energy) / (2 * h)
        assert abs(fh - fd) / abs(fd) < 1e-4


def test_fh_zero_for_constant_field():
    prof = MagneticProfile.constant(1.5)
    for n, k in ((1, 0.0), (2, 3.0), (3, -4.0)):
        assert abs(fh_derivative(solve_fiber(prof, k, n)[n - 1])) < 1e-8


def test_second_derivative(model_m2):
    assert band_second_derivative(MagneticProfile.constant(1.0), 1, 5.0) == 0.0
    d2 = band_second_derivative(model_m2, 1, 60.0)
    assert d2 < 0
    assert d2 == pytest.approx(-2 * 3 * 4 / 60.0**4, rel=0.15)


def test_rho_inverse(model_m2):
    assert rho_inverse(model_m2, 1, 1e-4) == pytest.approx(200.0, rel=0.05)
    with pytest.raises(DomainError):
        rho_inverse(model_m2, 1, 1.0 + 0.1)
    with pytest.raises(DegenerateBandError):
        rho_inverse(MagneticProfile.constant(1.0), 1, 1e-3)


def test_rho_inverse_hits_target(model_m2):
    k = rho_inverse(model_m2, 2, 1e-3)
    assert solve_fiber(model_m2, k, 2)[1].threshold_gap == pytest.approx(1e-3, rel=1e-7)


def test_band_table_invariants(model_m2):
    ks = np.geomspace(10.0, 300.0, 12)
    for n in (1, 2):
        table = band_table(model_m2, n, ks, second_derivative=False)
        assert np.all(np.diff(table.energies) > 0)
        assert np.all(table.energies < upper_threshold(model_m2, n))
        assert np.all(table.fh_derivatives > 0)
    csv_text = table.to_csv()
    assert csv_text.splitlines()[0] == "n,k,E,dE,d2E,grid_points,half_width"
    assert len(csv_text.splitlines()) == len(ks) + 1


def test_band_table_constant_field():
    table = band_table(MagneticProfile.constant(2.0), 2, [-3.0, 0.0, 4.0])
    np.testing.assert_allclose(table.energies, 6.0, rtol=1e-8)
    with pytest.raises(ValueError):
        band_table(MagneticProfile.constant(2.0), 1, [1.0, 0.0])


def test_band_tail_slope(model_m2):
    ks = np.geomspace(100.0, 1000.0, 9)
    gaps = [solve_fiber(model_m2, k, 1)[0].threshold_gap for k in ks]
    slope = np.polyfit(np.log(ks), np.log(gaps), 1)[0]
    assert slope == pytest.approx(-2.0, rel=0.02)


def test_eigenpair_invariants(model_m2):
    for k in (-5.0, 1.0, 10.0, 80.0):
        pairs = solve_fiber(model_m2, k, 3)
        for p in pairs:
            x = p.grid.x
            assert p.grid.spacing * np.sum(p.u**2) == pytest.approx(1.0, abs=1e-6)
            assert 1.0 * (2 * p.n - 1) <= p.energy <= 2.0 * (2 * p.n - 1)
            scale = math.sqrt(p.b_k)
            profile = hermite_eval(p.n, scale * (x - p.grid.center))
            assert np.dot(p.u, profile) > 0
            assert p.grid.spacing * (p.grid.points - 1) == pytest.approx(
                2 * p.grid.half_width * p.grid.length_scale, rel=1e-12)
        gaps = np.diff([p.energy for p in pairs])
        assert np.all(gaps >= 2.0 * 1.0 * (1 - 1e-8))


def test_galerkin_matches_finite_differences(model_m2):
    for k in (10.0, 25.0):
        g = solve_fiber(model_m2, k, 3, method="galerkin")
        f = solve_fiber(model_m2, k, 3, method="fd")
        for a, b in zip(g, f):
            assert a.energy == pytest.approx(b.energy, rel=1e-8)


def test_gaussian_decay(model_m2):
    for k, n in ((20.0, 1), (20.0, 2), (60.0, 3)):
        tau, envelope = gaussian_decay(solve_fiber(model_m2, k, n)[n - 1])
        assert tau > 0
        assert math.isfinite(envelope)


@settings(max_examples=15, deadline=None)
@given(st.floats(5.0, 150.0), st.floats(1.01, 1.5))
def test_band_monotone_property(k, factor):
    prof = MagneticProfile.model(1.0, 2.0, 2.0, 1.0, 2.0)
    assert solve_fiber(prof, k, 1)[0].energy < solve_fiber(prof, k * factor, 1)[0].energy
