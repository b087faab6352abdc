"""Point-potential heat kernels and the conditioned transition density.

Every kernel here is rotationally symmetric in each argument, so planar
integrals reduce to radial ones. Angular averages of Gaussians are done
in closed form with I0, using exponentially scaled Bessel functions to
avoid overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import i0e, k0, j0, y0

from .numerics import (DEFAULT_QUAD, QuadConfig, integrate,
                       integrate_log_singular, panel_rule)
from .volterra import (EULER_GAMMA, exp_int_E, exp_int_E_scalar, nu, nu_prime,
                       nu_prime_convolution)


class InfiniteValue(float):
    """A float equal to +inf returned where a kernel is genuinely infinite.

    Code that needs to branch on it can test ``isinstance(v, InfiniteValue)``
    instead of comparing against a large magnitude.
    """

    def __new__(cls):
        return super().__new__(cls, math.inf)

    def __repr__(self):
        return "InfiniteValue()"


INFINITE = InfiniteValue()

KERNEL_QUAD = QuadConfig(abs_tol=1e-13, rel_tol=1e-10)


@dataclass(frozen=True)
class ModelParams:
    T: float
    lam: float
    quad: QuadConfig = field(default=KERNEL_QUAD)

    def __post_init__(self):
        if not (self.T > 0 and self.lam > 0):
            raise ValueError("T and lambda must be positive")
        if not math.isfinite(self.T * self.lam):
            raise ValueError("T*lambda must be finite")


def _radius(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(abs(x)) if x.ndim == 0 else float(np.hypot(*x))


def gaussian_g(t: float, x):
    """Planar heat kernel (1/2 pi t) exp(-|x|^2/2t); x is a point or a radius."""
    r = np.asarray(x, dtype=float)
    r2 = r * r if r.ndim == 0 or r.shape[-1:] != (2,) else np.sum(r * r, axis=-1)
    val = np.exp(-r2 / (2 * t)) / (2 * math.pi * t)
    return float(val) if np.ndim(val) == 0 else val


def angular_gaussian(t: float, a: float, rho):
    """int_0^2pi g_t(x - y) dtheta for |x| = a and y = rho e^{i theta}."""
    rho = np.asarray(rho, dtype=float)
    return np.exp(-(a - rho) ** 2 / (2 * t)) * i0e(a * rho / t) / t


def bessel_q(t: float, a: float, b):
    """Transition density of the two-dimensional Bessel process from a to b."""
    b = np.asarray(b, dtype=float)
    return angular_gaussian(t, a, b) * b


# --------------------------------------------------------------------------
# H and its radial derivative

def big_H(T: float, lam: float, r, cfg: QuadConfig | None = None):
    """H_T^lam(r) = int_0^T e^{-r^2/2u} nu((T-u) lam) du / u.

    H vanishes for T <= 0. At r = 0 the integral diverges and the
    InfiniteValue sentinel is returned (inf inside arrays).
    """
    if np.ndim(r) == 0 and float(r) == 0 and T > 0:
        return INFINITE
    rs = np.atleast_1d(np.asarray(r, dtype=float))
    if T <= 0:
        out = np.zeros(rs.shape)
    else:
        out = np.full(rs.shape, math.inf)
        ok = rs > 0
        if np.any(ok):
            out[ok] = _big_H_positive(T, lam, rs[ok], cfg or KERNEL_QUAD)
    return float(out[0]) if np.ndim(r) == 0 else out.reshape(np.shape(r))


def _big_H_positive(T, lam, rs, cfg):
    c = 0.5 * rs * rs
    nT = nu(T * lam)

    # the constant nu(T lam) integrates to an exponential integral; the rest is bounded at u = 0
    def f(u):
        return np.exp(-c[None, :] / u[:, None]) * ((nu((T - u) * lam) - nT) / u)[:, None]

    rest = integrate_log_singular(f, 0.0, T, cfg, singular="both").value
    return nT * exp_int_E(c / T) + rest


def big_H_dr(T: float, lam: float, r: float, cfg: QuadConfig | None = None) -> float:
    """Radial derivative -r int_0^T e^{-r^2/2u} nu((T-u) lam) du / u^2."""
    if T <= 0:
        return 0.0
    if r <= 0:
        return -math.inf
    cfg = cfg or KERNEL_QUAD
    c = 0.5 * r * r
    nT = nu(T * lam)
    dT = lam * nu_prime(T * lam)

    # subtract the constant and linear parts of nu((T-u) lam) at u = 0
    def f(u):
        u = np.asarray(u)
        e = np.exp(-c / u)
        with np.errstate(invalid="ignore", over="ignore"):
            v = e * ((nu((T - u) * lam) - nT + u * dT) / u) / u
        return np.where(e > 0, v, 0.0)

    rest = integrate_log_singular(f, 0.0, T, cfg, singular="both").value
    lead = nT * math.exp(-c / T) / c - dT * exp_int_E(c / T)
    return -r * (lead + rest)


def big_H_alt(T: float, lam: float, r: float, cfg: QuadConfig | None = None) -> float:
    """H through N_{alpha,beta} = int_1^inf e^{-alpha R} nu((1 - 1/R) beta) dR / R.

    alpha = r^2/2T and beta = T lam. Used as a second route for H.
    """
    if T <= 0:
        return 0.0
    if r == 0:
        return INFINITE
    cfg = cfg or KERNEL_QUAD
    al, be = 0.5 * r * r / T, T * lam
    nb = nu(be)

    def f(R):
        R = np.asarray(R)
        return np.exp(-al * R) * (nu((1.0 - 1.0 / R) * be) - nb) / R

    near = integrate_log_singular(f, 1.0, 2.0, cfg, singular="a").value
    far = integrate(f, 2.0, math.inf, cfg).value
    return nb * exp_int_E(al) + near + far


def near_origin_H(T: float, lam: float, r: float) -> float:
    """Leading small-r form of 1 + H: -2 nu(T lam)(log r + log(lam/2)/2 + gamma)."""
    return -2.0 * nu(T * lam) * (math.log(r) + 0.5 * math.log(lam / 2.0) + EULER_GAMMA)


# --------------------------------------------------------------------------
# upsilon and h

_GL8_X, _GL8_W = panel_rule(np.array([0.0, 1.0]), 8)


@numba.njit(cache=True)
def _upsilon_half(al, be):
    # int_0^{1/2} e^{-al/s}/s * e^{-be/(1-s)}/(1-s) ds with s = e^{-w}/2.
    # The w-integral of e^{-2 al e^w} alone is E(2 al) and is split off exactly;
    # what is left decays like e^{-w} and is cut where e^{-2 al e^w} underflows.
    whi = min(math.log1p(400.0 / al), 40.0)
    npan = int(math.ceil(whi))
    width = whi / npan
    eb = math.exp(-be)
    rest = 0.0
    for k in range(npan):
        for j in range(_GL8_X.shape[0]):
            w = (k + _GL8_X[j]) * width
            s = 0.5 * math.exp(-w)
            psi = math.exp(-be / (1.0 - s)) / (1.0 - s) - eb
            rest += width * _GL8_W[j] * math.exp(-2.0 * al * math.exp(w)) * psi
    return eb * exp_int_E_scalar(2.0 * al) + rest


@numba.njit(cache=True)
def upsilon_scalar(al, be):
    if al <= 0.0 or be <= 0.0:
        return math.inf
    return _upsilon_half(al, be) + _upsilon_half(be, al)


@numba.vectorize(["float64(float64, float64)"], cache=True)
def _upsilon_ufunc(al, be):
    return upsilon_scalar(al, be)


def upsilon(alpha, beta):
    """upsilon(a, b) = int_0^1 e^{-a/s} e^{-b/(1-s)} ds / (s (1-s)); +inf if a or b is 0."""
    out = _upsilon_ufunc(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def upsilon_quad(alpha: float, beta: float, cfg: QuadConfig | None = None) -> float:
    """upsilon by direct adaptive quadrature in s (test route)."""
    cfg = cfg or QuadConfig(abs_tol=1e-300, rel_tol=1e-12, max_subdivisions=5000)

    def f(s):
        s = np.asarray(s)
        with np.errstate(divide="ignore", under="ignore"):
            v = np.exp(-alpha / s - beta / (1.0 - s)) / (s * (1.0 - s))
        return np.where((s > 0) & (s < 1), v, 0.0)

    return integrate(f, 0.0, 0.5, cfg).value + integrate(f, 0.5, 1.0, cfg).value


def little_h(t: float, lam: float, x, y, cfg: QuadConfig | None = None) -> float:
    """h_t^lam(x, y) from the single radial integral against nu'(t lam r)."""
    a, b = _radius(x), _radius(y)
    if a == 0 or b == 0:
        return INFINITE
    ca, cb = a * a / (2 * t), b * b / (2 * t)

    def G(r):
        r = np.asarray(r, dtype=float)
        om = 1.0 - r
        out = np.zeros(r.shape)
        ok = om > 0
        out[ok] = upsilon(ca / om[ok], cb / om[ok]) / om[ok]
        return out

    return lam / (2 * math.pi) * nu_prime_convolution(G, 1.0, t * lam, cfg or KERNEL_QUAD)


def little_h_radial(t: float, lam: float, a: float, bs, cfg: QuadConfig | None = None):
    """little_h at one radius a and an array of radii bs, on a shared node set."""
    bs = np.atleast_1d(np.asarray(bs, dtype=float))
    out = np.full(bs.shape, math.inf)
    ok = bs > 0
    if a <= 0 or not np.any(ok):
        return out
    ca = a * a / (2 * t)
    cb = bs[ok] ** 2 / (2 * t)
    tl = t * lam
    g0 = upsilon(ca, cb)

    def f(r):
        om = (1.0 - r)[:, None]
        with np.errstate(divide="ignore"):
            G = np.where(om > 0, upsilon(ca / om, cb[None, :] / om) / om, 0.0)
        return nu_prime(tl * r)[:, None] * (G - g0[None, :])

    rest = integrate_log_singular(f, 0.0, 1.0, cfg or KERNEL_QUAD, singular="both").value
    out[ok] = lam / (2 * math.pi) * (g0 * nu(tl) / tl + rest)
    return out


def full_f(t: float, lam: float, x, y, cfg: QuadConfig | None = None) -> float:
    """f_t^lam(x, y) = g_t(x - y) + h_t^lam(x, y) for planar points x, y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return gaussian_g(t, x - y) + little_h(t, lam, x, y, cfg)


# --------------------------------------------------------------------------
# radial integration helpers

def radial_integral(F, scale: float, cfg: QuadConfig | None = None) -> float:
    """int_0^inf F(rho) d rho for F with at worst a log singularity at 0.

    ``scale`` is where most of the mass sits; [0, scale] gets the
    double-exponential rule and the tail adaptive Gauss-Kronrod.
    """
    cfg = cfg or KERNEL_QUAD
    near = integrate_log_singular(F, 0.0, scale, cfg, singular="a").value
    far = integrate(F, scale, math.inf, cfg).value
    return near + far


# radial integrands vanish like rho log^2(1/rho) at the origin; nodes closer than
# this are dropped rather than evaluated through an underflowed rho^2
_RHO_MIN = 1e-100


def _masked(F):
    def wrapped(rho):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        out = np.zeros(rho.shape)
        keep = rho >= _RHO_MIN
        if np.any(keep):
            out[keep] = F(rho[keep])
        return out
    return wrapped


def h_mass(t: float, lam: float, a: float, cfg=None) -> float:
    """int_{R^2} h_t(x, y) dy for |x| = a, which should equal H_t(a)."""
    F = _masked(lambda rho: 2 * math.pi * rho * little_h_radial(t, lam, a, rho))
    return radial_integral(F, a + 3 * math.sqrt(t), cfg)


# --------------------------------------------------------------------------
# transition density

def trans_density_d(P: ModelParams, s: float, t: float, x, y, cfg=None) -> float:
    """Transition density d_{s,t}^{T,lam}(x, y) of the conditioned diffusion."""
    if not 0 <= s < t:
        raise ValueError("need 0 <= s < t")
    T, lam = P.T, P.lam
    cfg = cfg or P.quad
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if T <= s:
        return gaussian_g(t - s, x - y)
    if t > T:
        return _extended_d(P, s, t, x, y, cfg)
    tau = t - s
    rx, ry = _radius(x), _radius(y)
    if ry == 0:
        return INFINITE
    num = 1.0 + big_H(T - t, lam, ry, cfg)
    if rx == 0:
        conv = lam * nu_prime_convolution(lambda r: gaussian_g(np.maximum(tau - np.asarray(r), 1e-300), ry),
                                          tau, lam, cfg)
        return num * conv / nu((T - s) * lam)
    return full_f(tau, lam, x, y, cfg) * num / (1.0 + big_H(T - s, lam, rx, cfg))


def _extended_d(P, s, t, x, y, cfg):
    # s < T < t: the conditioned diffusion runs to T, then free Brownian motion.
    # At time T the factor 1 + H_0 is one, so the Gaussian part convolves in closed form.
    T, lam = P.T, P.lam
    rx, ry = _radius(x), _radius(y)
    scale = rx + ry + 3 * math.sqrt(t - s)
    if rx == 0:
        F = _masked(lambda rho: rho * radial_d(P, s, T, 0.0, rho, cfg) * angular_gaussian(t - T, ry, rho)
                    / (2 * math.pi))
        return radial_integral(F, scale, cfg)
    F = _masked(lambda rho: rho * little_h_radial(T - s, lam, rx, rho, cfg) * angular_gaussian(t - T, ry, rho))
    hpart = radial_integral(F, scale, cfg)
    return (gaussian_g(t - s, x - y) + hpart) / (1.0 + big_H(T - s, lam, rx, cfg))


def radial_d(P: ModelParams, s: float, t: float, a: float, rho, cfg=None):
    """Angular integral of d_{s,t}(x, y) over |y| = rho, for |x| = a.

    Multiplying by rho and integrating over rho gives the planar integral.
    """
    T, lam = P.T, P.lam
    if not 0 <= s < t <= T:
        raise ValueError("radial_d needs 0 <= s < t <= T")
    cfg = cfg or P.quad
    tau = t - s
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    num = 1.0 + big_H(T - t, lam, rho, cfg)
    if a == 0:
        # limit x -> 0: lam int_0^tau g_{tau-r}(y) nu'(r lam) dr / nu((T-s) lam)
        def G(r):
            dt = np.maximum(tau - r, 1e-300)[:, None]
            return np.exp(-rho[None, :] ** 2 / (2 * dt)) / dt
        conv = lam * nu_prime_convolution(G, tau, lam, cfg)
        return num * conv / nu((T - s) * lam)
    ang = angular_gaussian(tau, a, rho) + 2 * math.pi * little_h_radial(tau, lam, a, rho, cfg)
    return ang * num / (1.0 + big_H(T - s, lam, a, cfg))


def d_normalization_residual(P: ModelParams, s: float, t: float, a: float, cfg=None) -> float:
    """int_{R^2} d_{s,t}(x, y) dy - 1 for |x| = a."""
    F = _masked(lambda rho: rho * radial_d(P, s, t, a, rho, cfg))
    return radial_integral(F, a + 3 * math.sqrt(t - s), cfg) - 1.0


def _angle_pair(t1, t2, a, c, phi, rho):
    # int_0^2pi g_t1(x - y) g_t2(y - z) dtheta, |x| = a, |z| = c, angle phi between them
    rho = np.asarray(rho, dtype=float)
    v = math.hypot(a / t1 + c * math.cos(phi) / t2, c * math.sin(phi) / t2)
    expo = -(a * a + rho * rho) / (2 * t1) - (rho * rho + c * c) / (2 * t2) + v * rho
    return np.exp(expo) * i0e(v * rho) / (2 * math.pi * t1 * t2)


def f_semigroup_residual(t1: float, t2: float, lam: float, a: float, c: float, phi: float = 0.7,
                         cfg=None) -> float:
    """int f_t1(x, y) f_t2(y, z) dy - f_{t1+t2}(x, z), all angular parts in closed form."""
    cfg = cfg or KERNEL_QUAD

    @_masked
    def F(rho):
        gg = _angle_pair(t1, t2, a, c, phi, rho)
        h1 = little_h_radial(t1, lam, a, rho)
        h2 = little_h_radial(t2, lam, c, rho)
        gh = angular_gaussian(t1, a, rho) * h2 + h1 * angular_gaussian(t2, c, rho)
        return rho * (gg + gh + 2 * math.pi * h1 * h2)

    lhs = radial_integral(F, max(a, c) + 3 * math.sqrt(t1 + t2), cfg)
    dist = math.sqrt(a * a + c * c - 2 * a * c * math.cos(phi))
    return lhs - (gaussian_g(t1 + t2, dist) + little_h(t1 + t2, lam, a, c))


def chapman_kolmogorov_residual(P: ModelParams, r: float, s: float, t: float, a: float, c: float,
                                phi: float = 0.7, cfg=None) -> float:
    """int d_{r,s}(x, y) d_{s,t}(y, z) dy - d_{r,t}(x, z) with |x| = a, |z| = c.

    The angular part is done in closed form; the product of the two
    densities keeps its H(y) factors so nothing is assumed to cancel.
    """
    T, lam = P.T, P.lam
    cfg = cfg or P.quad
    t1, t2 = s - r, t - s
    den = 1.0 + big_H(T - r, lam, a, cfg)
    numz = 1.0 + big_H(T - t, lam, c, cfg)

    @_masked
    def F(rho):
        gg = _angle_pair(t1, t2, a, c, phi, rho)
        h1 = little_h_radial(t1, lam, a, rho)
        h2 = little_h_radial(t2, lam, c, rho)
        gh = angular_gaussian(t1, a, rho) * h2 + h1 * angular_gaussian(t2, c, rho)
        Hy = 1.0 + big_H(T - s, lam, rho, cfg)
        # d_{r,s}(x,y) d_{s,t}(y,z) = f f * (1+H(y))/(1+H(x)) * (1+H(z))/(1+H(y))
        return rho * (gg + gh + 2 * math.pi * h1 * h2) * (Hy / den) * (numz / Hy)

    lhs = radial_integral(F, max(a, c) + 3 * math.sqrt(t - r), cfg)
    z = np.array([c * math.cos(phi), c * math.sin(phi)])
    return lhs - trans_density_d(P, r, t, np.array([a, 0.0]), z, cfg)


# --------------------------------------------------------------------------
# drift and ratio functions

def drift_bbar(t: float, lam: float, r: float, cfg=None) -> float:
    """Magnitude of the inward drift, -dH/dr / (1 + H); zero at r = 0 by convention."""
    if r <= 0 or t <= 0:
        return 0.0
    return -big_H_dr(t, lam, r, cfg) / (1.0 + big_H(t, lam, r, cfg))


def drift_b(t: float, lam: float, x):
    """Planar drift vector, pointing at the origin."""
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    if r == 0:
        return np.zeros(2)
    return -x / r * drift_bbar(t, lam, r)


def drift_bound(T: float, lam: float, r: float) -> float:
    """Shape of the drift upper bound with the constant set to one."""
    if r * r >= 2 * T * T * lam:
        return math.exp(-r * r / (2 * T)) / (1 + max(0.0, math.log(1 / (T * lam)))) / r
    return 1.0 / (1 + max(0.0, math.log(2 * T / (r * r)))) / r


def ratio_R(T: float, lam: float, lam_p: float, r: float, cfg=None) -> float:
    """(1 + H^{lam'})/(1 + H^{lam}); at r = 0 the limit nu(T lam')/nu(T lam)."""
    if lam == lam_p:
        return 1.0
    if r == 0:
        return nu(T * lam_p) / nu(T * lam)
    return (1.0 + big_H(T, lam_p, r, cfg)) / (1.0 + big_H(T, lam, r, cfg))


def phi(T: float, lam: float, lam_p: float, a: float) -> float:
    """nu((T - a) lam') / nu((T - a) lam), equal to 1 at a = T."""
    if not 0 <= a <= T:
        raise ValueError("a must lie in [0, T]")
    if a == T or lam == lam_p:
        return 1.0
    return nu((T - a) * lam_p) / nu((T - a) * lam)


# --------------------------------------------------------------------------
# eigenfunctions of the radial kernel

def bound_state(lam: float, a):
    """Normalized radial bound state 2 sqrt(lam) K0(sqrt(2 lam) a)."""
    return 2.0 * math.sqrt(lam) * k0(math.sqrt(2 * lam) * np.asarray(a, dtype=float))


def continuum_state(lam: float, r: float, a):
    """Real radial scattering state built from J0 and Y0."""
    L = math.log(r * r / (2 * lam))
    a = np.asarray(a, dtype=float)
    return (L * j0(r * a) - math.pi * y0(r * a)) / math.hypot(L, math.pi)


def _radial_apply(t: float, lam: float, a: float, psi, cfg=None) -> float:
    # int_0^inf [q_t(a, b) + 2 pi b h_t(a, b)] psi(b) db
    @_masked
    def F(b):
        return (bessel_q(t, a, b) + 2 * math.pi * b * little_h_radial(t, lam, a, b)) * psi(b)

    # split at a, where q peaks, and integrate each side with its own rule
    cfg = cfg or QuadConfig(abs_tol=1e-11, rel_tol=1e-9)
    edge = a + 12 * math.sqrt(t)
    left = integrate_log_singular(F, 0.0, a, cfg, singular="both").value
    mid = integrate_log_singular(F, a, edge, cfg, singular="a").value
    far = integrate(F, edge, math.inf, cfg).value
    return left + mid + far


def eigen_bound_residual(t: float, lam: float, a: float, cfg=None) -> float:
    """Relative residual of f-bar applied to the bound state against e^{t lam} psi(a)."""
    lhs = _radial_apply(t, lam, a, lambda b: bound_state(lam, b), cfg)
    rhs = math.exp(t * lam) * float(bound_state(lam, a))
    return (lhs - rhs) / rhs


def eigen_continuum_residual(t: float, lam: float, r: float, a: float, cfg=None) -> float:
    """Residual of f-bar applied to a scattering state against e^{-t r^2/2} psi_r(a)."""
    lhs = _radial_apply(t, lam, a, lambda b: continuum_state(lam, r, b), cfg)
    return lhs - math.exp(-t * r * r / 2) * float(continuum_state(lam, r, a))
