import math

import numpy as np
import pytest

from volterra_lt.kernels import (INFINITE, InfiniteValue, ModelParams, big_H, big_H_alt, big_H_dr,
                                 bound_state, chapman_kolmogorov_residual, d_normalization_residual,
                                 drift_b, drift_bbar, drift_bound, eigen_bound_residual,
                                 eigen_continuum_residual, f_semigroup_residual, full_f, gaussian_g,
                                 h_mass, little_h, near_origin_H, phi, radial_integral, ratio_R,
                                 trans_density_d, upsilon, upsilon_quad)
from volterra_lt.volterra import EULER_GAMMA, exp_int_E, nu

P = ModelParams(1.0, 1.0)


def logp(z):
    return max(0.0, math.log(z))


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0.0, 1.0)
    with pytest.raises(ValueError):
        ModelParams(1.0, -1.0)
    with pytest.raises(ValueError):
        ModelParams(1e300, 1e300)


def test_gaussian():
    assert gaussian_g(1.0, [0.0, 0.0]) == pytest.approx(1 / (2 * math.pi))
    assert gaussian_g(4.0, [2.0, 0.0]) == pytest.approx(gaussian_g(1.0, [1.0, 0.0]) / 4)
    mass = radial_integral(lambda r: 2 * math.pi * r * gaussian_g(0.7, r), 3.0)
    assert mass == pytest.approx(1.0, abs=1e-10)


def test_H_sentinels_and_conventions():
    assert isinstance(big_H(1.0, 1.0, 0.0), InfiniteValue) and big_H(1.0, 1.0, 0.0) == math.inf
    assert big_H(0.0, 1.0, 0.5) == 0.0 and big_H(-1.0, 1.0, 0.5) == 0.0
    arr = big_H(1.0, 1.0, np.array([0.0, 0.5]))
    assert arr[0] == math.inf and np.isfinite(arr[1])


@pytest.mark.parametrize("r", [1e-3, 0.1, 0.7, 2.5])
def test_H_two_routes(r):
    assert big_H(1.3, 0.8, r) == pytest.approx(big_H_alt(1.3, 0.8, r), rel=1e-9)


def test_H_scale_invariance():
    a = 2.0
    for r in (0.05, 0.5, 1.5):
        assert big_H(1.0, 1.0, r) == pytest.approx(big_H(1.0 / a, a * 1.0, r / math.sqrt(a)), rel=1e-9)


def test_H_far_decay():
    T = 1.0
    for r in (4.0, 6.0, 8.0):
        bound = nu(T) * math.exp(-r * r / (2 * T)) * 2 * T / (r * r)
        assert big_H(T, 1.0, r) <= bound


def test_H_near_origin():
    r = 1e-4
    gap = abs(1 + big_H(1.0, 1.0, r) - 2 * nu(1.0) * (math.log(1 / r) + 0.5 * math.log(2.0) - EULER_GAMMA))
    assert gap <= 10 * r * r * (1 + math.log(1 / r))
    assert near_origin_H(1.0, 1.0, r) == pytest.approx(1 + big_H(1.0, 1.0, r), rel=1e-6)


def test_H_monotone():
    rs = np.geomspace(1e-3, 3, 25)
    h = big_H(1.0, 1.0, rs)
    assert np.all(np.diff(h) < 0)
    assert big_H(1.5, 1.0, 0.4) > big_H(1.0, 1.0, 0.4)
    assert big_H(1.0, 2.0, 0.4) > big_H(1.0, 1.0, 0.4)


def test_H_derivative_finite_difference():
    r, e = 0.37, 1e-5
    fd = (big_H(1.0, 1.0, r + e) - big_H(1.0, 1.0, r - e)) / (2 * e)
    assert big_H_dr(1.0, 1.0, r) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("a, b", [(0.1, 0.3), (2.0, 0.05), (1.0, 1.0), (1e-3, 5.0)])
def test_upsilon(a, b):
    assert upsilon(a, b) == pytest.approx(upsilon_quad(a, b), rel=1e-9)
    assert upsilon(a, b) == upsilon(b, a)
    assert upsilon(a, b) <= 2 * math.exp(-b) * exp_int_E(a) + 2 * math.exp(-a) * exp_int_E(b)


def test_h_symmetry():
    rng = np.random.default_rng(4)
    for _ in range(4):
        x, y = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        assert little_h(0.6, 1.3, x, y) == pytest.approx(little_h(0.6, 1.3, y, x), rel=1e-9)


def test_h_integrates_to_H():
    for a in (0.2, 0.8):
        assert h_mass(0.7, 1.0, a) == pytest.approx(big_H(0.7, 1.0, a), rel=1e-7)


def test_h_decoupled_bound():
    # h over the decoupled bound stays O(1) for t lam <= 2, radii near 0 included (about 2 at t lam = 2)
    worst = 0.0
    for t, lam in ((0.01, 0.1), (0.3, 1.0), (1.0, 1.0), (0.5, 4.0)):
        for a in (1e-8, 1e-3, 0.3, 1.0, 3.0):
            for b in (1e-8, 0.05, 0.5, 2.0):
                bound = (1 / t) / (1 + logp(1 / (lam * t))) * (math.exp(-a * a / (2 * t)) + logp(2 * t / a / a)) \
                    * (math.exp(-b * b / (2 * t)) + logp(2 * t / b / b))
                worst = max(worst, little_h(t, lam, [a, 0], [b, 0]) / bound)
    assert worst < 5.0


def test_f_dominates_g():
    x, y = np.array([0.3, 0.1]), np.array([-0.2, 0.5])
    assert full_f(0.5, 1.0, x, y) >= gaussian_g(0.5, x - y)


def test_f_semigroup():
    assert abs(f_semigroup_residual(0.4, 0.6, 1.0, 0.3, 0.7)) <= 1e-5


@pytest.mark.parametrize("s, t, a", [(0.0, 0.5, 0.3), (0.2, 0.9, 1.0), (0.5, 1.0, 0.05)])
def test_d_normalization(s, t, a):
    assert abs(d_normalization_residual(P, s, t, a)) <= 1e-6


def test_d_normalization_from_origin():
    assert abs(d_normalization_residual(P, 0.1, 0.6, 0.0)) <= 1e-6


def test_chapman_kolmogorov():
    assert abs(chapman_kolmogorov_residual(P, 0.1, 0.45, 0.85, 0.4, 0.6)) <= 1e-5


def test_d_after_horizon_is_gaussian():
    x, y = np.array([0.3, 0.0]), np.array([0.1, 0.4])
    assert trans_density_d(P, 1.0, 1.5, x, y) == gaussian_g(0.5, x - y)
    assert trans_density_d(P, 1.2, 1.5, x, y) == gaussian_g(0.3, x - y)


def test_d_straddling_horizon_is_positive():
    v = trans_density_d(P, 0.6, 1.4, np.array([0.3, 0.0]), np.array([0.1, 0.4]))
    assert np.isfinite(v) and v > 0


def test_d_requires_order():
    with pytest.raises(ValueError):
        trans_density_d(P, 0.5, 0.5, [0.1, 0], [0.2, 0])


def test_drift_direction_and_blowup():
    x = np.array([0.3, -0.4])
    assert np.dot(drift_b(1.0, 1.0, x), x) < 0
    assert np.all(drift_b(1.0, 1.0, [0.0, 0.0]) == 0)
    r = 1e-6
    lead = 1 / (r * math.log(1 / r))
    # next order in 1/log(1/r) is a few tens of percent at r = 1e-6
    assert drift_bbar(1.0, 2.0, r) == pytest.approx(lead, rel=0.25)


def test_drift_bound_grid():
    worst = max(drift_bbar(T, lam, r) / drift_bound(T, lam, r)
                for T, lam in ((0.1, 0.1), (1.0, 1.0), (3.0, 0.3), (1.0, 0.01))
                for r in (1e-8, 1e-4, 0.1, 0.5, 1.0, 2.0, 4.0))
    assert worst < 5.0


def test_ratio_and_phi():
    assert ratio_R(1.0, 1.0, 1.0, 0.3) == 1.0 and phi(1.0, 1.0, 1.0, 0.2) == 1.0
    assert phi(1.0, 1.0, 2.0, 1.0) == 1.0
    assert ratio_R(1.0, 1.0, 2.0, 0.0) == pytest.approx(nu(2.0) / nu(1.0))
    rs = np.geomspace(1e-3, 3, 12)
    vals = [ratio_R(1.0, 1.0, 1.5, r) for r in rs]
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        phi(1.0, 1.0, 2.0, 1.5)


def test_eigen_bound_state():
    for a in np.geomspace(0.05, 2.0, 5):
        assert abs(eigen_bound_residual(0.5, 1.0, a)) <= 1e-5
    assert bound_state(1.0, 1.0) > 0


def test_eigen_continuum_state():
    for a in (0.2, 1.0):
        assert abs(eigen_continuum_residual(0.5, 1.0, 1.3, a)) <= 1e-4
