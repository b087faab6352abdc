"""The Volterra function nu and the exponential-integral family.

    nu(x) = int_0^inf x^s / Gamma(s+1) ds

is evaluated through Ramanujan's representation nu(x) = e^x - N(x) with

    N(x) = int_R exp(-x e^u) / (pi^2 + u^2) du.

Shifting u by log(1/x) puts the double-exponential cutoff at the origin.
The slowly decaying left tail of 1/(pi^2 + u^2) is integrated in closed
form (an arctangent), and what remains is smooth and decays
exponentially, so a fixed composite Gauss-Legendre rule reaches full
double precision for every x > 0. The scalar kernels are jitted so the
samplers can call them inside their own loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import rgamma

from .numerics import (DEFAULT_QUAD, QuadConfig, integrate,
                       integrate_log_singular, panel_rule)

EULER_GAMMA = 0.577215664901532860606512090082
PI2 = math.pi ** 2

_LOW_NODES, _LOW_WEIGHTS = panel_rule(np.linspace(-40.0, 0.0, 21), 12)
_UP_NODES, _UP_WEIGHTS = panel_rule(np.linspace(0.0, 4.5, 7), 12)
_ALL_NODES = np.concatenate([_LOW_NODES, _UP_NODES])
_ALL_WEIGHTS = np.concatenate([_LOW_WEIGHTS, _UP_WEIGHTS])

# below this argument 1/x^2 overflows and nu'' falls back to its leading asymptotics
NU2_ASYMPTOTIC_BELOW = 1e-150


@numba.njit(cache=True)
def _ramanujan_parts(x):
    """Return (nu(x) - expm1(x), J1, J2) for x > 0.

    J1 and J2 are the shifted integrals with an extra e^v and e^{2v},
    so nu' = e^x + J1/x and nu'' = e^x - J2/x^2.
    """
    u0 = -math.log(x)
    low = 0.0
    for i in range(_LOW_NODES.shape[0]):
        v = _LOW_NODES[i]
        low += _LOW_WEIGHTS[i] * (-math.expm1(-math.exp(v))) / (PI2 + (v + u0) ** 2)
    up = 0.0
    for i in range(_UP_NODES.shape[0]):
        v = _UP_NODES[i]
        up += _UP_WEIGHTS[i] * math.exp(-math.exp(v)) / (PI2 + (v + u0) ** 2)
    j1 = 0.0
    j2 = 0.0
    for i in range(_ALL_NODES.shape[0]):
        v = _ALL_NODES[i]
        ev = math.exp(v)
        core = _ALL_WEIGHTS[i] * math.exp(-ev) * ev / (PI2 + (v + u0) ** 2)
        j1 += core
        j2 += core * ev
    rest = math.atan2(math.pi, u0) / math.pi + low - up
    return rest, j1, j2


@numba.njit(cache=True)
def nu_scalar(x):
    if x <= 0.0:
        return 0.0
    rest, _, _ = _ramanujan_parts(x)
    return math.expm1(x) + rest


@numba.njit(cache=True)
def nu_prime_scalar(x):
    if x <= 0.0:
        return math.inf
    _, j1, _ = _ramanujan_parts(x)
    return math.exp(x) + j1 / x


@numba.njit(cache=True)
def nu_double_prime_scalar(x):
    if x <= 0.0:
        return -math.inf
    if x < NU2_ASYMPTOTIC_BELOW:
        return -1.0 / (x * x * math.log(x) ** 2)
    _, _, j2 = _ramanujan_parts(x)
    return math.exp(x) - j2 / (x * x)


@numba.njit(cache=True)
def ramanujan_N_scalar(x):
    if x <= 0.0:
        return 1.0
    rest, _, _ = _ramanujan_parts(x)
    return 1.0 - rest


@numba.vectorize(["float64(float64)"], cache=True)
def _nu_ufunc(x):
    return nu_scalar(x)


@numba.vectorize(["float64(float64)"], cache=True)
def _nu_prime_ufunc(x):
    return nu_prime_scalar(x)


@numba.vectorize(["float64(float64)"], cache=True)
def _nu_double_prime_ufunc(x):
    return nu_double_prime_scalar(x)


@numba.vectorize(["float64(float64)"], cache=True)
def _ramanujan_N_ufunc(x):
    return ramanujan_N_scalar(x)


def _out(y):
    return float(y) if np.ndim(y) == 0 else y


def _check_nonneg(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("nu is defined for x >= 0")
    return x


def nu(x, cfg: QuadConfig | None = None):
    """Volterra function nu(x) for x >= 0 (scalar or array).

    Without ``cfg`` the fixed Ramanujan rule is used. With ``cfg`` the
    same Ramanujan integral is computed by adaptive quadrature instead,
    which reports NonConvergence rather than returning a poor value.
    """
    x = _check_nonneg(x)
    if cfg is None:
        return _out(_nu_ufunc(x))
    vals = np.vectorize(lambda v: 0.0 if v == 0 else math.exp(v) - ramanujan_N_quad(v, cfg))(x)
    return _out(vals)


def nu_prime(x):
    """nu'(x) for x > 0; +inf at 0."""
    return _out(_nu_prime_ufunc(_check_nonneg(x)))


def nu_double_prime(x):
    """nu''(x) for x > 0; below 1e-150 the leading term -1/(x^2 log^2 x)."""
    return _out(_nu_double_prime_ufunc(_check_nonneg(x)))


def ramanujan_N(x):
    """N(x) = e^x - nu(x) from the shifted Ramanujan rule."""
    return _out(_ramanujan_N_ufunc(_check_nonneg(x)))


def ramanujan_N_quad(x: float, cfg: QuadConfig | None = None) -> float:
    """N(x) by adaptive quadrature of the unshifted integrand over the real line."""
    cfg = cfg or DEFAULT_QUAD
    if x == 0:
        return 1.0

    def f(u):
        return np.exp(-x * np.exp(np.minimum(u, 700.0))) / (PI2 + u * u)

    # the cutoff sits near u = log(1/x); splitting there keeps the bisection short
    c = -math.log(x)
    left = integrate(f, -math.inf, c, cfg)
    right = integrate(f, c, math.inf, cfg)
    return left.value + right.value


def nu_series(x: float, cfg: QuadConfig | None = None) -> float:
    """nu(x) straight from its defining integral over s (independent oracle)."""
    cfg = cfg or QuadConfig(abs_tol=1e-300, rel_tol=1e-13)
    if x == 0:
        return 0.0
    lx = math.log(x)

    def f(s):
        s = np.asarray(s, dtype=float)
        from scipy.special import gammaln
        return np.exp(s * lx - gammaln(s + 1.0))

    # the integrand peaks near s = x; split there so the half-line map sees a tail only
    peak = max(x, 1.0)
    return integrate(f, 0.0, peak, cfg).value + integrate(f, peak, math.inf, cfg).value


def nu_prime_minus_nu(x: float, cfg: QuadConfig | None = None) -> float:
    """int_0^1 x^(s-1)/Gamma(s) ds, which equals nu'(x) - nu(x)."""
    cfg = cfg or QuadConfig(abs_tol=1e-300, rel_tol=1e-13)
    lx = math.log(x)
    return integrate(lambda s: np.exp((s - 1.0) * lx) * rgamma(s), 0.0, 1.0, cfg).value


def nu_small_x_series(x, terms: int = 3):
    """Leading terms of nu(x) as x -> 0, in powers of 1/log(1/x)."""
    L = np.log(1.0 / np.asarray(x, dtype=float))
    g = EULER_GAMMA
    coeffs = [1.0, g, g * g - PI2 / 6.0]
    return _out(sum(c / L ** (k + 1) for k, c in enumerate(coeffs[:terms])))


def nu_large_x_series(x, terms: int = 3):
    """e^x minus the leading log-power corrections of N(x) as x -> infinity."""
    lx = np.log(np.asarray(x, dtype=float))
    g = EULER_GAMMA
    coeffs = [1.0, -g, g * g - PI2 / 6.0]
    return _out(np.exp(x) - sum(c / lx ** (k + 1) for k, c in enumerate(coeffs[:terms])))


# --------------------------------------------------------------------------
# Exponential integrals

def _tilde_series(x):
    # int_0^x (1 - e^-y)/y dy = sum (-1)^(k+1) x^k / (k k!)
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, 40):
        term = term * x / k
        total = total + (term if k % 2 else -term) / k
    return total


def _bold_cf(x):
    # e^x E(x) by the modified Lentz continued fraction (valid for x >= 1)
    tiny = 1e-300
    b = x + 1.0
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d
    for i in range(1, 400):
        an = -float(i * i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return h


def _exp_int_parts(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("exponential integrals need x > 0")
    small = x < 1.0
    xs = np.where(small, x, 0.5)
    xl = np.where(small, 1.0, x)
    tilde_s = _tilde_series(xs)
    bold_l = _bold_cf(xl)
    return x, small, tilde_s, bold_l


def exp_int_E(x):
    """E(x) = int_x^inf e^-y / y dy."""
    x, small, tilde_s, bold_l = _exp_int_parts(x)
    with np.errstate(under="ignore"):
        val = np.where(small, -np.log(np.where(small, x, 1.0)) - EULER_GAMMA + tilde_s,
                       bold_l * np.exp(-x))
    return _out(val)


def E_tilde(x):
    """E~(x) = int_0^x (1 - e^-y)/y dy."""
    x, small, tilde_s, bold_l = _exp_int_parts(x)
    with np.errstate(under="ignore"):
        big = bold_l * np.exp(-x) + np.log(x) + EULER_GAMMA
    return _out(np.where(small, tilde_s, big))


def E_bold(x):
    """e^x E(x), evaluated without overflow for large x."""
    x, small, tilde_s, bold_l = _exp_int_parts(x)
    xs = np.where(small, x, 1.0)
    val = np.where(small, np.exp(xs) * (-np.log(xs) - EULER_GAMMA + tilde_s), bold_l)
    return _out(val)


@numba.njit(cache=True)
def exp_int_E_scalar(x):
    """E(x) for one x > 0, callable from jitted code."""
    if x <= 0.0:
        return math.inf
    if x < 1.0:
        total = 0.0
        term = 1.0
        for k in range(1, 40):
            term *= x / k
            total += (term if k % 2 else -term) / k
        return -math.log(x) - EULER_GAMMA + total
    b = x + 1.0
    c = 1e300
    d = 1.0 / b
    h = d
    for i in range(1, 400):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x)


@dataclass(frozen=True)
class NuEval:
    x: float
    nu: float
    nu_prime: float
    nu_double_prime: float
    method: str = "ramanujan"


@dataclass(frozen=True)
class ExpIntEval:
    x: float
    E: float
    E_tilde: float
    E_bold: float


def nu_eval(x: float, method: str = "ramanujan") -> NuEval:
    if method == "ramanujan":
        v = nu(x)
    elif method == "series-quadrature":
        v = nu_series(x)
    else:
        raise ValueError(f"unknown method {method!r}")
    return NuEval(x, v, nu_prime(x) if x > 0 else math.inf,
                  nu_double_prime(x) if x > 0 else -math.inf, method)


def exp_int_eval(x: float) -> ExpIntEval:
    return ExpIntEval(x, exp_int_E(x), E_tilde(x), E_bold(x))


# --------------------------------------------------------------------------
# Integrals against nu'(lambda y) and the identities built on them

def nu_prime_convolution(G, x: float, lam: float, cfg: QuadConfig | None = None) -> float:
    """int_0^x nu'(lam y) G(y) dy for G regular at 0.

    nu'(lam y) ~ 1/(lam y log^2(1/y)) near 0, whose tail converges far too
    slowly to sample. The value G(0) is therefore split off and integrated
    exactly, G(0) nu(lam x)/lam, leaving a bounded integrand.

    G may return shape (n, m) for n points, giving m integrals at once.
    """
    cfg = cfg or QuadConfig(abs_tol=1e-13, rel_tol=1e-11)
    g0 = np.asarray(G(np.array([0.0])), dtype=float)[0]
    if np.ndim(g0) == 0:
        g0 = float(g0)

    def f(y):
        gy = np.asarray(G(y), dtype=float)
        npr = nu_prime(lam * y)
        return (npr if gy.ndim == 1 else npr[:, None]) * (gy - g0)

    rest = integrate_log_singular(f, 0.0, x, cfg, singular="both")
    return g0 * nu(lam * x) / lam + rest.value


def laplace_check_nu(s: float, cfg: QuadConfig | None = None) -> float:
    """int_0^inf e^{-s x} nu(x) dx - 1/(s log s), for s > 1."""
    if s <= 1:
        raise ValueError("the Laplace transform of nu needs s > 1")
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-12)

    def f(x):
        x = np.asarray(x, dtype=float)
        # nu(x) e^{-x} = 1 - N(x) e^{-x} keeps the far tail free of overflow
        return np.exp(-(s - 1.0) * x) - np.exp(-s * x) * ramanujan_N(x)

    near = integrate_log_singular(f, 0.0, 1.0, cfg, singular="a").value
    far = integrate(f, 1.0, math.inf, cfg).value
    return near + far - 1.0 / (s * math.log(s))


def log_convolution_residual(x: float, lam: float, cfg: QuadConfig | None = None) -> float:
    """lam int_0^x log(x-y) nu'(y lam) dy + 1 + (log lam + gamma) nu(x lam)."""
    lhs = lam * nu_prime_convolution(lambda y: np.log(x - np.asarray(y)), x, lam, cfg)
    return lhs + 1.0 + (math.log(lam) + EULER_GAMMA) * nu(x * lam)


def double_nu_prime_inner(r: float, t: float, T: float, lam: float, cfg=None) -> float:
    """int_t^T nu'((T-s) lam) / (s - r) ds for 0 <= r < t < T.

    With w = T - s the pole 1/(D - w), D = T - r, sits just past the end
    w = W = T - t. Both the nu' singularity at w = 0 and the pole are split
    off in closed form.
    """
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-11)
    W = T - t
    D = T - r
    delta = t - r
    wnw = W * nu_prime(W * lam)

    def f(w):
        w = np.asarray(w)
        return (w * nu_prime(w * lam) - wnw) / (D * (D - w))

    rest = integrate_log_singular(f, 0.0, W, cfg, singular="both").value
    return nu(W * lam) / (lam * D) + wnw / D * math.log(D / delta) + rest


def double_nu_prime_residual(t: float, T: float, lam: float, cfg=None) -> float:
    """int_0^t int_t^T nu'(r lam) (s-r)^-1 nu'((T-s) lam) ds dr - nu'(T lam)/lam."""
    cfg = cfg or QuadConfig(abs_tol=1e-13, rel_tol=1e-10)

    def inner(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.array([double_nu_prime_inner(v, t, T, lam) for v in r])

    lhs = nu_prime_convolution(inner, t, lam, cfg)
    return lhs - nu_prime(T * lam) / lam


def beta_pair_residual(beta: float, beta_p: float, cfg=None) -> float:
    """int_0^1 [nu((1-th) b') nu(b) - nu(b') nu((1-th) b)] / th dth minus its closed form."""
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-12)
    nb, nbp = nu(beta), nu(beta_p)

    def f(th):
        th = np.asarray(th)
        return (nu((1.0 - th) * beta_p) * nb - nbp * nu((1.0 - th) * beta)) / th

    lhs = integrate_log_singular(f, 0.0, 1.0, cfg, singular="both").value
    return lhs - (math.log(beta / beta_p) * nbp * nb + nbp - nb)


def ebold_convolution_residual(x: float, lam: float, z: float, cfg=None) -> float:
    """lam int_0^x Ebold((x-y) z) nu'(y lam) dy minus its closed form.

    The closed form is e^{xz} + log(lam/z) nu(x lam)
    + z log(lam/z) int_0^x e^{(x-a) z} nu(a lam) da, so for z = lam the
    right side is just e^{x lam}.
    """
    cfg = cfg or QuadConfig(abs_tol=1e-13, rel_tol=1e-11)
    lhs = lam * nu_prime_convolution(lambda y: E_bold(np.maximum((x - np.asarray(y)) * z, 1e-300)),
                                     x, lam, cfg)
    lz = math.log(lam / z)
    tail = 0.0
    if lz != 0.0:
        tail = integrate_log_singular(lambda a: np.exp((x - np.asarray(a)) * z) * nu(np.asarray(a) * lam),
                                      0.0, x, cfg, singular="a").value
    return lhs - (math.exp(x * z) + lz * nu(x * lam) + z * lz * tail)


def escape_mass_identity_residual(eps: float, T: float, lam: float, cfg=None) -> float:
    """int_0^eps int_eps^T lam nu'(a lam) (b-a)^-1 nu((T-b) lam) db da - (nu(T lam) - nu(eps lam))."""
    cfg = cfg or QuadConfig(abs_tol=1e-13, rel_tol=1e-10)

    def inner(a):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return np.array([_escape_mass_inner(v, eps, T, lam) for v in a])

    lhs = lam * nu_prime_convolution(inner, eps, lam, cfg)
    return lhs - (nu(T * lam) - nu(eps * lam))


def _escape_mass_inner(a, eps, T, lam):
    # int_eps^T nu((T-b) lam) / (b - a) db with the pole at b = a just below eps
    delta = eps - a
    top = nu((T - eps) * lam)

    def f(b):
        b = np.asarray(b)
        return (nu((T - b) * lam) - top) / (b - a)

    cfg = QuadConfig(abs_tol=1e-14, rel_tol=1e-11)
    rest = integrate_log_singular(f, eps, T, cfg, singular="both").value
    return top * math.log((T - a) / delta) + rest
