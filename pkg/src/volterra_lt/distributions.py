"""Volterra-Poisson law, first-hitting time of the origin, and local-time laws."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from scipy.special import gammaln

from .kernels import ModelParams, _radius, angular_gaussian, big_H, radial_integral
from .numerics import (QuadConfig, RngStream, gauss_legendre, integrate,
                       integrate_log_singular, rng_uniforms, uniform_at)
from .volterra import nu, nu_double_prime, nu_prime, nu_scalar

TABLE_NODES = 2048
_GL = gauss_legendre(8)


@dataclass(frozen=True)
class VolterraPoisson:
    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def density(self, v):
        return vp_density(self.theta, v)

    def cdf(self, v):
        return vp_cdf(self.theta, v)

    def sample(self, stream: RngStream, n: int):
        return vp_sample(self.theta, stream, n)

    @property
    def mean(self) -> float:
        return vp_mean(self.theta)

    @property
    def variance(self) -> float:
        return vp_variance(self.theta)


def vp_density(theta: float, v):
    """theta^v / (Gamma(v+1) nu(theta)) for v >= 0, zero below."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(v >= 0, np.exp(np.maximum(v, 0) * math.log(theta) - gammaln(np.maximum(v, 0) + 1.0)), 0.0)
    out = out / nu(theta)
    return float(out) if out.ndim == 0 else out


def _vp_upper(theta: float) -> float:
    # past this point the density is below 1e-18 of its peak and decreasing
    v = max(4.0, 2.0 * theta + 10.0)
    peak = max(theta, 1.0)
    lt = math.log(theta)
    lpeak = max(0.0, peak * lt - math.lgamma(peak + 1.0)) if theta > 1 else 0.0
    while v * lt - math.lgamma(v + 1.0) > lpeak - 42.0:
        v *= 1.5
    return v


def vp_cdf(theta: float, v: float, cfg: QuadConfig | None = None) -> float:
    """P[X <= v] by adaptive quadrature of the density."""
    if v <= 0:
        return 0.0
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-12)
    return min(1.0, integrate(lambda s: vp_density(theta, s), 0.0, v, cfg).value)


def vp_mean(theta: float) -> float:
    return theta * nu_prime(theta) / nu(theta)


def vp_variance(theta: float) -> float:
    """Second cumulant (theta d/dtheta)^2 log nu(theta)."""
    n, n1, n2 = nu(theta), nu_prime(theta), nu_double_prime(theta)
    return theta * n1 / n + theta * theta * (n2 / n - (n1 / n) ** 2)


def vp_mgf(theta: float, a: float) -> float:
    """E[e^{aX}] = nu(theta e^a)/nu(theta)."""
    return nu(theta * math.exp(a)) / nu(theta)


class CdfTable:
    """Monotone piecewise-cubic CDF on fixed nodes, exact at the nodes.

    Node values come from Gauss-Legendre integration of the density on
    each panel; between nodes the CDF is the cubic Hermite interpolant
    whose slopes are the density itself.
    """

    def __init__(self, nodes, density):
        nodes = np.asarray(nodes, dtype=float)
        x, w = _GL
        width = np.diff(nodes)
        pts = nodes[:-1, None] + width[:, None] * x[None, :]
        mass = width * np.sum(w[None, :] * density(pts.ravel()).reshape(pts.shape), axis=1)
        cdf = np.concatenate([[0.0], np.cumsum(mass)])
        total = cdf[-1]
        self.nodes = nodes
        self.cdf = cdf / total
        self.pdf = density(nodes) / total
        self.total = total

    def sample(self, u):
        return _table_invert(self.nodes, self.cdf, self.pdf, np.asarray(u, dtype=float))

    def __call__(self, v):
        return _table_eval(self.nodes, self.cdf, self.pdf, np.atleast_1d(np.asarray(v, dtype=float)))


@numba.njit(cache=True)
def _hermite(x0, h, f0, f1, p0, p1, tau):
    t2 = tau * tau
    t3 = t2 * tau
    return ((2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + tau) * h * p0
            + (-2 * t3 + 3 * t2) * f1 + (t3 - t2) * h * p1)


@numba.njit(cache=True)
def _table_eval(nodes, cdf, pdf, v):
    out = np.empty(v.shape[0])
    n = nodes.shape[0]
    for i in range(v.shape[0]):
        x = v[i]
        if x <= nodes[0]:
            out[i] = 0.0
            continue
        if x >= nodes[n - 1]:
            out[i] = 1.0
            continue
        k = np.searchsorted(nodes, x) - 1
        h = nodes[k + 1] - nodes[k]
        out[i] = _hermite(nodes[k], h, cdf[k], cdf[k + 1], pdf[k], pdf[k + 1], (x - nodes[k]) / h)
    return out


@numba.njit(cache=True)
def _table_invert(nodes, cdf, pdf, u):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        target = u[i]
        k = np.searchsorted(cdf, target, side="right") - 1
        if k >= nodes.shape[0] - 1:
            out[i] = nodes[nodes.shape[0] - 1]
            continue
        if k < 0:
            k = 0
        h = nodes[k + 1] - nodes[k]
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _hermite(nodes[k], h, cdf[k], cdf[k + 1], pdf[k], pdf[k + 1], mid) < target:
                lo = mid
            else:
                hi = mid
        out[i] = nodes[k] + h * 0.5 * (lo + hi)
    return out


@lru_cache(maxsize=64)
def vp_table(theta: float) -> CdfTable:
    upper = _vp_upper(theta)
    return CdfTable(np.linspace(0.0, upper, TABLE_NODES + 1), lambda v: vp_density(theta, v))


def vp_sample(theta: float, stream: RngStream, n: int = 1):
    """n Volterra-Poisson draws by table inversion; returns (draws, advanced stream)."""
    u, stream = rng_uniforms(stream, n)
    return vp_table(float(theta)).sample(u), stream


# --------------------------------------------------------------------------
# hitting time of the origin and the local time accumulated after it

def tau_density(P: ModelParams, x, t):
    """Density of the first time at the origin, given that it happens before T."""
    r = _radius(x)
    if r == 0:
        raise ValueError("tau_density needs a starting point away from the origin")
    t = np.asarray(t, dtype=float)
    c = 0.5 * r * r
    with np.errstate(divide="ignore", under="ignore"):
        core = np.where(t > 0, np.exp(-c / np.where(t > 0, t, 1.0)) / np.where(t > 0, t, 1.0), 0.0)
    out = core * nu(np.clip((P.T - t) * P.lam, 0.0, None)) / big_H(P.T, P.lam, r, P.quad)
    out = np.where((t >= 0) & (t <= P.T), out, 0.0)
    return float(out) if out.ndim == 0 else out


def origin_hit_probability(P: ModelParams, x) -> float:
    """P[the path reaches the origin before T] = H/(1+H)."""
    r = _radius(x)
    if r == 0:
        return 1.0
    H = big_H(P.T, P.lam, r, P.quad)
    return H / (1.0 + H)


def tau_survival_residual(P: ModelParams, x, s: float) -> float:
    """1 - P[tau <= s] from the density, minus the Gaussian-propagated survival.

    The second route is (1/(1+H_T(x))) int g_s(x-y)(1+H_{T-s}(y)) dy.
    """
    r = _radius(x)
    cfg = QuadConfig(abs_tol=1e-12, rel_tol=1e-10)
    mass = integrate(lambda t: tau_density(P, r, t), 0.0, s, cfg).value
    from_density = 1.0 - origin_hit_probability(P, r) * mass
    F = lambda rho: rho * angular_gaussian(s, r, rho) * (1.0 + big_H(P.T - s, P.lam, rho, P.quad))
    prop = radial_integral(_nonzero(F), r + 3 * math.sqrt(s), cfg)
    return from_density - prop / (1.0 + big_H(P.T, P.lam, r, P.quad))


def _nonzero(F):
    def g(rho):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        out = np.zeros(rho.shape)
        keep = rho > 1e-100
        out[keep] = F(rho[keep])
        return out
    return g


def tau_localtime_joint_density(P: ModelParams, x, t, v):
    """Joint density of (tau, L_T) given that the origin is reached."""
    r = _radius(x)
    t = float(t)
    v = np.asarray(v, dtype=float)
    if not 0 < t <= P.T:
        return np.zeros(v.shape) if v.ndim else 0.0
    lt = math.log((P.T - t) * P.lam) if t < P.T else -math.inf
    with np.errstate(under="ignore", invalid="ignore"):
        vp = np.where(v >= 0, np.exp(v * lt - gammaln(np.maximum(v, 0) + 1.0)), 0.0)
    if t == P.T:
        vp = np.zeros(v.shape)
    out = math.exp(-0.5 * r * r / t) / t * vp / big_H(P.T, P.lam, r, P.quad)
    return float(out) if out.ndim == 0 else out


def localtime_mgf(P: ModelParams, x, beta: float) -> float:
    """E[e^{beta L_T}] from the point x."""
    r = _radius(x)
    lp = P.lam * math.exp(beta)
    if r == 0:
        return nu(P.T * lp) / nu(P.T * P.lam)
    return (1.0 + big_H(P.T, lp, r, P.quad)) / (1.0 + big_H(P.T, P.lam, r, P.quad))


def localtime_mgf_from_joint(P: ModelParams, x, beta: float, cfg=None) -> float:
    """The same MGF by integrating e^{beta v} against the joint law numerically."""
    r = _radius(x)
    cfg = cfg or QuadConfig(abs_tol=1e-12, rel_tol=1e-9)

    def inner(t):
        # int_0^inf e^{beta v} joint(t, v) dv, v integrated on its own
        out = []
        for tv in np.atleast_1d(t):
            if tv >= P.T:
                out.append(0.0)
                continue
            lt = math.log((P.T - tv) * P.lam) + beta
            pref = math.exp(-0.5 * r * r / tv) / tv / big_H(P.T, P.lam, r, P.quad)
            g = lambda v: pref * np.exp(np.asarray(v) * lt - gammaln(np.asarray(v) + 1.0))
            peak = max(1.0, math.exp(lt))
            out.append(integrate(g, 0.0, peak, cfg).value + integrate(g, peak, math.inf, cfg).value)
        return np.array(out)

    conditional = integrate_log_singular(inner, 0.0, P.T, cfg, singular="b").value
    p_hit = origin_hit_probability(P, r)
    return (1.0 - p_hit) + p_hit * conditional


@lru_cache(maxsize=64)
def tau_table(T: float, lam: float, r: float) -> CdfTable:
    c = 0.5 * r * r
    lo = max(c / 45.0, T * 1e-14)
    half = 0.5 * T
    if lo >= half:
        left = np.linspace(lo, half, TABLE_NODES // 2 + 1)
    else:
        left = np.geomspace(lo, half, TABLE_NODES // 2 + 1)
    right = T - np.geomspace(half, T * 1e-13, TABLE_NODES // 2 + 1)[1:]
    nodes = np.concatenate([[0.0], left, right, [T]])
    P = ModelParams(T, lam)
    return CdfTable(nodes, lambda t: tau_density(P, r, t))


def tau_sample(P: ModelParams, x, stream: RngStream, n: int = 1):
    """n draws of tau given that the origin is reached; returns (draws, stream)."""
    u, stream = rng_uniforms(stream, n)
    return tau_table(P.T, P.lam, _radius(x)).sample(u), stream


def joint_sample(P: ModelParams, x, stream: RngStream, n: int = 1):
    """(tau, L_T) draws given that the origin is reached: tau first, then L_T ~ VP((T-tau) lam)."""
    taus, stream = tau_sample(P, x, stream, n)
    thetas = np.maximum((P.T - taus) * P.lam, 0.0)
    ls, stream = vp_sample_logconcave(thetas, stream)
    return taus, ls, stream


class RejectionStall(RuntimeError):
    pass


MAX_REJECTIONS = 1_000_000


@numba.njit(cache=True)
def _digamma(x):
    acc = 0.0
    while x < 8.0:
        acc -= 1.0 / x
        x += 1.0
    x2 = 1.0 / (x * x)
    return acc + math.log(x) - 0.5 / x - x2 * (1.0 / 12 - x2 * (1.0 / 120 - x2 * (1.0 / 252 - x2 / 240)))


@numba.njit(cache=True)
def vp_mode(theta):
    """Mode of the Volterra-Poisson density: digamma(m + 1) = log theta, or 0."""
    lt = math.log(theta)
    if lt <= _digamma(1.0):
        return 0.0
    lo, hi = 0.0, 2.0 * theta + 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _digamma(mid + 1.0) < lt:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@numba.njit(cache=True)
def vp_draw(theta, k0, k1, index):
    """One draw by rejection under the log-concave envelope M min(1, e^{1 - M|x - m|}).

    Returns (value, next word index); value is -1 if the loop stalls.
    """
    if theta <= 0.0:
        return 0.0, index
    lt = math.log(theta)
    lnu = math.log(nu_scalar(theta))
    m = vp_mode(theta)
    logM = m * lt - math.lgamma(m + 1.0) - lnu
    M = math.exp(logM)
    for _ in range(MAX_REJECTIONS):
        u = 2.0 * uniform_at(k0, k1, index)
        v = uniform_at(k0, k1, index + np.uint64(1))
        side = uniform_at(k0, k1, index + np.uint64(2))
        index += np.uint64(3)
        if u <= 1.0:
            y = u / M
            t = v
        else:
            if u - 1.0 <= 0.0:
                continue
            y = (1.0 - math.log(u - 1.0)) / M
            t = v * (u - 1.0)
        xv = m + y if side < 0.5 else m - y
        if xv < 0.0:
            continue
        logf = xv * lt - math.lgamma(xv + 1.0) - lnu
        if t <= math.exp(logf - logM):
            return xv, index
    return -1.0, index


@numba.njit(cache=True)
def _vp_draws(thetas, k0, k1, index, out):
    for i in range(thetas.shape[0]):
        out[i], index = vp_draw(thetas[i], k0, k1, index)
        if out[i] < 0.0:
            return index, i
    return index, -1


def vp_sample_logconcave(thetas, stream: RngStream):
    """One Volterra-Poisson draw per entry of thetas, by envelope rejection."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    out = np.empty(thetas.shape[0])
    k0, k1 = stream.key
    index, bad = _vp_draws(thetas, k0, k1, np.uint64(stream.counter), out)
    if bad >= 0:
        raise RejectionStall(f"rejection loop stalled at theta={thetas[bad]!r}")
    return out, RngStream(stream.seed, stream.stream_id, int(index))
