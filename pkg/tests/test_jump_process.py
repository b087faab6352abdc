import functools
import math

import numpy as np
import pytest
from scipy import stats

from stat_checks import chi2_pvalue, hotelling_pvalue
from volterra_lt.distributions import vp_table
from volterra_lt.jump_process import (default_delta_s, death_rate, escape_atom, escape_bin_masses,
                                      escape_total_mass, jump_rate_density, mean_terminal_local_time,
                                      pre_death_density, renewal_bin_masses, renewal_density,
                                      rn_reweight_check, rn_weight, simulate_ensemble, simulate_path,
                                      step_sample, step_samples, transition_atom,
                                      transition_ck_residual, transition_kernel,
                                      transition_mass_residual)
from volterra_lt.kernels import ModelParams
from volterra_lt.numerics import QuadConfig, RngStream, integrate, integrate_log_singular
from volterra_lt.volterra import nu

P = ModelParams(1.0, 1.0)


def test_jump_rate_near_diagonal():
    a = 0.3
    for d in (1e-6, 1e-9):
        assert d * jump_rate_density(P, a, a + d) == pytest.approx(1.0, rel=1e-5)
    assert death_rate(P, a) == pytest.approx(1 / nu(0.7))


def test_jump_rate_translation():
    a, Q = 0.25, ModelParams(0.75, 1.0)
    for b in (0.3, 0.6, 0.9):
        assert jump_rate_density(P, a, b) == pytest.approx(jump_rate_density(Q, 0.0, b - a), rel=1e-13)


def test_jump_rate_log_divergence():
    cfg = QuadConfig(abs_tol=1e-12, rel_tol=1e-10)
    m = [integrate(lambda b: jump_rate_density(P, 0.0, b), d, 1.0, cfg).value for d in (1e-2, 1e-4)]
    assert m[1] - m[0] == pytest.approx(math.log(100), rel=1e-2)


@pytest.mark.parametrize("s,a", [(0.05, 0.0), (0.3, 0.2), (1.0, 0.5), (2.5, 0.0), (0.7, 0.9)])
def test_transition_mass(s, a):
    assert abs(transition_mass_residual(P, s, a)) <= 1e-7


def test_chapman_kolmogorov_spec_point():
    r = transition_ck_residual(P, 0.3, 0.5, 0.0, np.linspace(0.05, 0.95, 19))
    assert np.max(np.abs(r)) <= 1e-5


def test_chapman_kolmogorov_random():
    g = np.random.default_rng(4)
    for _ in range(5):
        s, t = g.uniform(0.1, 1.0, 2)
        a = g.uniform(0, 0.5)
        bs = np.linspace(a + 0.05, 0.95, 9)
        assert np.max(np.abs(transition_ck_residual(P, s, t, a, bs))) <= 1e-5


def test_transition_kernel_concentrates_as_s_to_zero():
    a, w = 0.2, 0.01
    cfg = QuadConfig(abs_tol=1e-12, rel_tol=1e-9)
    outside = [integrate(lambda b: transition_kernel(P, s, a, b), a + w, 1.0, cfg).value + transition_atom(P, s, a)
               for s in (1e-2, 1e-3, 1e-4)]
    assert outside[0] > outside[1] > outside[2]
    assert outside[2] < 1e-3


def test_atom_limits():
    assert transition_atom(P, 1.0, 1.0) == 1.0
    assert transition_atom(P, 60.0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_step_atom_frequency():
    n, ds, a = 10 ** 5, 0.2, 0.3
    b, _ = step_samples(P, a, ds, RngStream(31), n)
    p = transition_atom(P, ds, a)
    k = np.count_nonzero(b == P.T)
    assert abs(k - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def _step_chi2(seed, n=10 ** 5, ds=0.5, a=0.2):
    b, _ = step_samples(P, a, ds, RngStream(seed), n)
    b = b[b < P.T]
    # 50 bins, equiprobable under the power-law proposal
    edges = a + (P.T - a) * np.linspace(0, 1, 51) ** (1 / ds)
    counts = np.histogram(b, edges)[0]
    return chi2_pvalue(counts, _step_bin_probs(ds, a))


@functools.lru_cache
def _step_bin_probs(ds, a):
    edges = a + (P.T - a) * np.linspace(0, 1, 51) ** (1 / ds)
    cfg = QuadConfig(abs_tol=1e-13, rel_tol=1e-10)
    return np.array([integrate(lambda x: transition_kernel(P, ds, a, x), lo, hi, cfg).value
                     for lo, hi in zip(edges[:-1], edges[1:])])


def test_step_density_chi2():
    assert _step_chi2(100) > 0.01


def test_step_density_chi2_pvalues_uniform():
    ps = [_step_chi2(seed, n=20000) for seed in range(200, 230)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_step_huge_delta_s_dies():
    b, _ = step_samples(P, 0.0, 80.0, RngStream(2), 1000)
    assert np.all(b == P.T)


def test_step_sample_advances_stream():
    s = RngStream(5)
    b1, s1 = step_sample(P, 0.1, 0.3, s)
    b2, s2 = step_sample(P, 0.1, 0.3, s1)
    assert s1.counter > s.counter and s2.counter > s1.counter
    assert 0.1 <= b1 <= 1.0 and b1 != b2
    with pytest.raises(ValueError):
        step_sample(P, 0.1, 0.0, s)


def test_path_structure():
    path = simulate_path(P, 0.0, 0.05, RngStream(7))
    assert np.all(np.diff(path.local_times) > 0)
    assert np.all(np.diff(path.positions) >= 0)
    assert path.positions[-1] == P.T and path.absorbed[-1] and not path.absorbed[:-1].any()
    assert path.terminal_local_time == path.local_times[-1]
    rows = list(path.rows())
    assert rows[-1][2] is True and len(rows) == len(path.positions)


def test_path_started_at_T():
    path = simulate_path(P, 1.0, 0.05, RngStream(7))
    assert path.terminal_local_time == 0.0


def test_path_matches_ensemble():
    ens = simulate_ensemble(P, 3, 0.05, seed=9)
    from volterra_lt.numerics import substream_ids
    ids = substream_ids(0, 3)
    S = [simulate_path(P, 0.0, 0.05, RngStream(9, int(i))).terminal_local_time for i in ids]
    assert np.allclose(S, ens.S, rtol=0, atol=1e-13)


def test_terminal_local_time_law():
    n = 10 ** 4
    ens = simulate_ensemble(P, n, seed=1)
    assert stats.kstest(ens.S, lambda v: vp_table(1.0)(v)).statistic <= 1.63 / math.sqrt(n)
    se = ens.S.std() / math.sqrt(n)
    assert abs(ens.S.mean() - mean_terminal_local_time(P)) <= 3 * se


def test_terminal_local_time_independent_of_grid():
    n = 10 ** 4
    a = simulate_ensemble(P, n, 1e-3, seed=2).S
    b = simulate_ensemble(P, n, 0.2, seed=3).S
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_ensemble_deterministic():
    a = simulate_ensemble(P, 200, seed=4, eps=0.1, edges=np.linspace(0, 1, 5))
    b = simulate_ensemble(P, 200, seed=4, eps=0.1, edges=np.linspace(0, 1, 5))
    assert np.array_equal(a.S, b.S) and np.array_equal(a.occupation, b.occupation)
    assert np.array_equal(a.escape, b.escape)


def test_pre_death_density_normalized():
    # b = a + e^{-u}, written through the translated model so that a + e^{-u}
    # does not round to a; the mass below e^{-700} is added from nu itself
    cfg = QuadConfig(abs_tol=1e-13, rel_tol=1e-10)
    for a in (0.0, 0.4):
        Pa = ModelParams(P.T - a, P.lam)
        f = lambda u: pre_death_density(Pa, 0.0, np.exp(-u)) * np.exp(-u)
        m = integrate(f, -math.log(P.T - a), 700.0, cfg).value
        m += nu(math.exp(-700.0) * P.lam) / nu((P.T - a) * P.lam)
        assert m == pytest.approx(1.0, abs=1e-6)


def test_renewal_occupation():
    n = 10 ** 4
    edges = np.linspace(0, 1, 31)
    ens = simulate_ensemble(P, n, seed=5, edges=edges)
    mu = renewal_bin_masses(P, 0.0, edges)
    assert mu.sum() == pytest.approx(mean_terminal_local_time(P), rel=1e-7)
    # the last bins are rarely visited; pool them to keep the covariance well conditioned
    occ = np.column_stack([ens.occupation[:, :25], ens.occupation[:, 25:].sum(axis=1)])
    m = np.append(mu[:25], mu[25:].sum())
    assert hotelling_pvalue(occ, m) > 0.01


def test_renewal_near_diagonal():
    # lam nu'(d) ~ 1/(d log^2 d) as d -> 0
    for d in (1e-6, 1e-9):
        r = renewal_density(P, 0.0, d) * d * math.log(d) ** 2
        assert r == pytest.approx(1.0, rel=0.3)


def test_escape_atom_value():
    assert escape_atom(P, 0.1) == pytest.approx(nu(0.1) / nu(1.0), rel=1e-15)


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.5])
def test_escape_total_mass(eps):
    assert escape_total_mass(P, eps) == pytest.approx(1.0, abs=1e-5)


def test_escape_law_simulation():
    # the skeleton only sees positions at multiples of delta_s, so the
    # recorded exit overshoots unless delta_s is small
    n, eps = 10 ** 4, 0.1
    ens = simulate_ensemble(P, n, 1e-4, seed=6, eps=eps, stop_at_escape=True)
    edges = np.linspace(eps, 1.0, 11)
    counts = np.append(np.histogram(ens.escape[ens.escape < 1.0], edges)[0],
                       np.count_nonzero(ens.escape == 1.0))
    probs = np.append(escape_bin_masses(P, eps, edges), escape_atom(P, eps))
    assert np.all(ens.escape > eps)
    assert chi2_pvalue(counts, probs) > 0.01


def test_escape_early_stop_keeps_law():
    a = simulate_ensemble(P, 300, 0.01, seed=3, eps=0.2)
    b = simulate_ensemble(P, 300, 0.01, seed=3, eps=0.2, stop_at_escape=True)
    assert np.array_equal(a.escape, b.escape)
    died = b.escape == P.T
    assert np.array_equal(a.S[died], b.S[died]) and np.isnan(b.S[~died]).all()


def test_rn_weight():
    w = rn_weight(P, 1.0, 0.2, 3.0)
    assert w.weight == 1.0
    w = rn_weight(P, 1.5, 0.0, 2.0)
    assert w.weight == pytest.approx(nu(1.0) / nu(1.5) * 1.5 ** 2)
    with pytest.raises(ValueError):
        rn_weight(P, -1.0, 0.0, 1.0)


def test_rn_weight_has_unit_mean():
    ens = simulate_ensemble(P, 10 ** 4, seed=7)
    w = rn_weight(P, 1.5, 0.0, ens.S)
    assert abs(w.mean() - 1.0) <= 3 * w.std() / math.sqrt(w.size)


def test_rn_reweight_check():
    a, b = rn_reweight_check(P, 1.5, lambda s: np.minimum(s, 1.0), n_paths=10 ** 4, seed=8)
    assert abs(a.z_score(b)) <= 3


def test_default_delta_s():
    assert default_delta_s(P) == pytest.approx(1e-2 * nu(1.0))
    assert transition_atom(P, default_delta_s(P), 0.0) < 0.05
