import math

import numpy as np
import pytest
from scipy import stats

from volterra_lt.distributions import (RejectionStall, VolterraPoisson, joint_sample, localtime_mgf,
                                       localtime_mgf_from_joint, origin_hit_probability, tau_density,
                                       tau_localtime_joint_density, tau_sample, tau_survival_residual,
                                       vp_cdf, vp_density, vp_mean, vp_mgf, vp_mode, vp_sample,
                                       vp_sample_logconcave, vp_table, vp_variance)
from volterra_lt.kernels import ModelParams, big_H
from volterra_lt.numerics import QuadConfig, RngStream, integrate
from volterra_lt.volterra import nu

P = ModelParams(1.0, 1.0)
Q = QuadConfig(abs_tol=1e-13, rel_tol=1e-11)


def log_nu_cumulant(theta, n, h=1e-2):
    # n-th derivative of s -> log nu(theta e^s) at s = 0, by central differences
    f = lambda s: math.log(nu(theta * math.exp(s)))
    if n == 2:
        return (f(h) - 2 * f(0) + f(-h)) / h ** 2
    return (f(2 * h) - 2 * f(h) + 2 * f(-h) - f(-2 * h)) / (2 * h ** 3)


@pytest.mark.parametrize("theta", [1e-3, 0.5, 1.0, 7.0, 50.0])
def test_vp_normalization(theta):
    assert integrate(lambda v: vp_density(theta, v), 0.0, math.inf, Q).value == pytest.approx(1.0, abs=1e-9)


def test_vp_density_support():
    assert vp_density(1.0, -0.5) == 0.0
    assert vp_density(2.0, 0.0) == pytest.approx(1 / nu(2.0))
    with pytest.raises(ValueError):
        VolterraPoisson(0.0)


def test_vp_moments_closed_form():
    for th in (0.3, 2.0, 20.0):
        m = integrate(lambda v: v * vp_density(th, v), 0, math.inf, Q).value
        m2 = integrate(lambda v: v * v * vp_density(th, v), 0, math.inf, Q).value
        assert vp_mean(th) == pytest.approx(m, rel=1e-9)
        assert vp_variance(th) == pytest.approx(m2 - m * m, rel=1e-8)


def test_vp_mgf_closed_form():
    a = 0.3
    lhs = integrate(lambda v: np.exp(np.minimum(a * v, 700.0)) * vp_density(1.0, v), 0, math.inf, Q).value
    assert vp_mgf(1.0, a) == pytest.approx(lhs, rel=1e-10)


def test_vp_table_against_cdf():
    tab = vp_table(1.0)
    for v in (0.1, 0.7, 2.0, 5.0):
        assert tab(v)[0] == pytest.approx(vp_cdf(1.0, v), abs=1e-10)


def test_vp_sampler_ks():
    n = 10 ** 5
    x, s = vp_sample(1.0, RngStream(11), n)
    assert s.counter == n
    d = stats.kstest(x, lambda v: vp_table(1.0)(v)).statistic
    assert d <= 1.63 / math.sqrt(n)


def test_vp_sampler_deterministic():
    a, _ = vp_sample(2.0, RngStream(3, 4), 50)
    b, _ = vp_sample(2.0, RngStream(3, 4), 50)
    assert np.array_equal(a, b)


def test_logconcave_sampler_matches_table_sampler():
    thetas = np.full(40000, 3.0)
    x, s = vp_sample_logconcave(thetas, RngStream(5))
    assert s.counter > 0
    y, _ = vp_sample(3.0, RngStream(6), 40000)
    assert stats.ks_2samp(x, y).pvalue > 0.01


def test_logconcave_sampler_zero_theta():
    x, _ = vp_sample_logconcave([0.0, 0.0], RngStream(1))
    assert np.all(x == 0)


def test_vp_mode():
    assert vp_mode(0.5) == 0.0
    th = 10.0
    m = vp_mode(th)
    vs = np.linspace(max(0, m - 1), m + 1, 2001)
    assert vs[np.argmax(vp_density(th, vs))] == pytest.approx(m, abs=2e-3)


def test_cumulants_from_log_nu():
    for th in (0.5, 5.0, 50.0):
        assert log_nu_cumulant(th, 2) == pytest.approx(vp_variance(th), rel=1e-4)


def test_tau_density_normalization():
    for x in (0.1, 0.5, 1.5):
        assert integrate(lambda t: tau_density(P, x, t), 0.0, 1.0, Q).value == pytest.approx(1.0, abs=1e-6)
    assert tau_density(P, 0.5, 1e-6) == pytest.approx(0.0, abs=1e-100)
    with pytest.raises(ValueError):
        tau_density(P, 0.0, 0.5)


def test_tau_survival_two_routes():
    for s in (0.1, 0.5, 0.9):
        assert abs(tau_survival_residual(P, 0.5, s)) <= 1e-5


def test_origin_hit_probability():
    h = big_H(1.0, 1.0, 0.4)
    assert origin_hit_probability(P, 0.4) == pytest.approx(h / (1 + h))
    assert origin_hit_probability(P, 0.0) == 1.0
    assert origin_hit_probability(P, 30.0) < 1e-100


def test_joint_density_marginal_and_slices():
    x = 0.5
    for t in (0.05, 0.4, 0.95):
        marg = integrate(lambda v: tau_localtime_joint_density(P, x, t, v), 0, math.inf, Q).value
        assert marg == pytest.approx(tau_density(P, x, t), rel=1e-6)
        v0 = tau_localtime_joint_density(P, x, t, 0.0)
        assert v0 == pytest.approx(math.exp(-x * x / (2 * t)) / t / big_H(1.0, 1.0, x))


def test_joint_density_total_mass():
    x = 0.5
    inner = lambda t: np.array([integrate(lambda v: tau_localtime_joint_density(P, x, tv, v), 0, math.inf, Q).value
                                for tv in np.atleast_1d(t)])
    assert integrate(inner, 0.0, 1.0, QuadConfig(abs_tol=1e-10, rel_tol=1e-8)).value == pytest.approx(1.0, abs=1e-5)


def test_localtime_mgf():
    assert localtime_mgf(P, 0.3, 0.0) == 1.0
    assert localtime_mgf(P, 0.0, 0.4) == pytest.approx(vp_mgf(1.0, 0.4), rel=1e-14)
    for x in (0.2, 0.8):
        assert localtime_mgf(P, x, 0.5) == pytest.approx(localtime_mgf_from_joint(P, x, 0.5), abs=1e-5)


def test_localtime_mgf_negative_beta():
    assert localtime_mgf(P, 0.4, -0.7) == pytest.approx(localtime_mgf_from_joint(P, 0.4, -0.7), abs=1e-5)


def test_joint_sampler_against_mgf():
    x, n = 0.3, 40000
    taus, ls, _ = joint_sample(P, x, RngStream(8), n)
    assert np.all((taus >= 0) & (taus <= 1)) and np.all(ls >= 0)
    # E[e^{beta L} | origin reached] from the closed form
    p = origin_hit_probability(P, x)
    target = (localtime_mgf(P, x, 0.5) - (1 - p)) / p
    vals = np.exp(0.5 * ls)
    assert abs(vals.mean() - target) <= 3 * vals.std() / math.sqrt(n)


def test_tau_sampler_ks():
    taus, _ = tau_sample(P, 0.5, RngStream(9), 20000)
    cdf = lambda t: np.array([integrate(lambda s: tau_density(P, 0.5, s), 0, tv, Q).value for tv in np.atleast_1d(t)])
    grid = np.linspace(0.02, 0.98, 25)
    emp = np.searchsorted(np.sort(taus), grid) / taus.size
    assert np.max(np.abs(emp - cdf(grid))) <= 1.63 / math.sqrt(taus.size)


def test_rejection_stall_type():
    assert issubclass(RejectionStall, RuntimeError)


def test_vp_mgf_monte_carlo():
    n = 10 ** 5
    x, _ = vp_sample(1.0, RngStream(21), n)
    w = np.exp(0.3 * x)
    assert abs(w.mean() - vp_mgf(1.0, 0.3)) <= 3 * w.std() / math.sqrt(n)


def test_vp_sample_mean_variance():
    n = 10 ** 5
    for th in (0.2, 4.0):
        x, _ = vp_sample(th, RngStream(22), n)
        assert abs(x.mean() - vp_mean(th)) <= 4 * x.std() / math.sqrt(n)
        se_var = math.sqrt(np.mean((x - x.mean()) ** 4) / n)
        assert abs(x.var() - vp_variance(th)) <= 4 * se_var


def test_small_theta_exponential_limit():
    th, n = 1e-4, 20000
    x, _ = vp_sample(th, RngStream(23), n)
    assert stats.kstest(math.log(1 / th) * x, "expon").statistic <= 0.05


def test_large_theta_sample_skew_matches_cumulants():
    th, n = 50.0, 10 ** 5
    x, _ = vp_sample_logconcave(np.full(n, th), RngStream(24))
    sk = log_nu_cumulant(th, 3) / log_nu_cumulant(th, 2) ** 1.5
    se = math.sqrt(6 / n)
    assert abs(stats.skew(x) - sk) <= 4 * se


@pytest.mark.xfail(strict=True, reason="skewness at theta=50 is about 0.141, above the 0.1 bound")
def test_large_theta_near_symmetric():
    th, n = 50.0, 10 ** 5
    x, _ = vp_sample_logconcave(np.full(n, th), RngStream(24))
    assert abs(stats.skew(x)) <= 0.1
