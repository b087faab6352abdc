"""The Volterra jump process: inverse local time at the origin.

Positions live in [0, T] and move up by jumps; T is absorbing. The
process is advanced through its closed-form transition kernels on a grid
of local-time steps delta_s, which is exact in space. Within a step the
death (absorption) time is also drawn exactly, so the terminal local
time S carries no grid error.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .kernels import ModelParams
from .numerics import (MCEstimate, QuadConfig, RngStream, gauss_legendre, integrate,
                       integrate_log_singular, substream_ids, uniform_at)
from .volterra import nu, nu_prime, nu_prime_convolution, nu_scalar

MAX_REJECTIONS = 1_000_000
_GL_X, _GL_W = gauss_legendre(8)


class RejectionStall(RuntimeError):
    pass


@dataclass(frozen=True)
class JumpPath:
    local_times: np.ndarray
    positions: np.ndarray
    terminal_local_time: float | None

    @property
    def absorbed(self) -> np.ndarray:
        out = np.zeros(len(self.positions), dtype=bool)
        if self.terminal_local_time is not None:
            out[-1] = True
        return out

    def rows(self):
        """(local_time, position, absorbed) rows for CSV export."""
        for s, b, d in zip(self.local_times, self.positions, self.absorbed):
            yield float(s), float(b), bool(d)


@dataclass(frozen=True)
class RNWeight:
    lam: float
    lam_prime: float
    eta0: float
    S: float
    weight: float


def default_delta_s(P: ModelParams) -> float:
    """Local-time step 1e-2 nu(T lam), keeping the per-step death probability small."""
    return 1e-2 * nu(P.T * P.lam)


# --------------------------------------------------------------------------
# kernels

def jump_rate_density(P: ModelParams, a: float, b):
    """Jump intensity from a to b in (a, T): nu((T-b) lam) / ((b-a) nu((T-a) lam))."""
    b = np.asarray(b, dtype=float)
    out = np.where((b > a) & (b < P.T),
                   nu(np.clip((P.T - b) * P.lam, 0, None)) / (np.where(b > a, b - a, 1.0) * nu((P.T - a) * P.lam)),
                   0.0)
    return float(out) if out.ndim == 0 else out


def death_rate(P: ModelParams, a: float) -> float:
    """Intensity of the jump straight to T from a."""
    return 1.0 / nu((P.T - a) * P.lam)


def transition_kernel(P: ModelParams, s: float, a: float, b):
    """Density part of the local-time-s transition from a, at b in [a, T)."""
    if s <= 0:
        raise ValueError("local-time step must be positive")
    b = np.asarray(b, dtype=float)
    inside = (b > a) & (b < P.T)
    bb = np.where(inside, b, a + 0.5 * (P.T - a))
    logc = s * math.log(P.lam) - math.lgamma(s)
    val = nu((P.T - bb) * P.lam) / nu((P.T - a) * P.lam) * np.exp((s - 1) * np.log(bb - a) + logc)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _atom_integral(theta: float, s: float) -> float:
    # int_0^s theta^r / Gamma(r+1) dr; the integrand is entire in r, so
    # Gauss-Legendre panels of width <= 1/2 are exact to rounding
    from scipy.special import gammaln
    edges = np.linspace(0.0, s, max(1, math.ceil(2 * s)) + 1)
    x, w = gauss_legendre(16)
    lo, hi = edges[:-1, None], edges[1:, None]
    r = (lo + (hi - lo) * x).ravel()
    ww = ((hi - lo) * w).ravel()
    return float(np.sum(ww * np.exp(r * math.log(theta) - gammaln(r + 1.0))))


def transition_atom(P: ModelParams, s: float, a: float) -> float:
    """Probability of reaching T within local time s from a."""
    if a >= P.T:
        return 1.0
    theta = (P.T - a) * P.lam
    return min(1.0, _atom_integral(theta, s) / nu(theta))


def transition_mass_residual(P: ModelParams, s: float, a: float, cfg=None) -> float:
    """int D_s(a, b) db + p_s(a) - 1.

    With b - a = (T - a) w^{1/s} the power singularity at b = a is absorbed
    into the measure, leaving only the logarithmic behaviour at b = T.
    """
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-12)
    L = P.T - a
    na = nu(L * P.lam)

    def f(d):
        # d = 1 - w, distance to the b = T end
        w = 1.0 - np.asarray(d)
        gap = -np.expm1(np.log1p(-np.asarray(d)) / s) if s != 1 else np.asarray(d)
        gap = np.where(w > 0, gap, 1.0)
        return nu(L * gap * P.lam)

    pref = math.exp(s * math.log(P.lam * L) - math.lgamma(s + 1.0)) / na
    dens = pref * (integrate_log_singular(f, 0.0, 0.5, cfg, singular="a", distance=True).value
                   + integrate(lambda w: f(1.0 - np.asarray(w)), 0.0, 0.5, cfg).value)
    return dens + transition_atom(P, s, a) - 1.0


def transition_ck_residual(P: ModelParams, s: float, t: float, a: float, bs, cfg=None):
    """Composition of the s and t kernels against the s+t kernel.

    Returns (max relative density residual over bs, atom residual). The
    intermediate point c is reached through c - a = (b - a) w^{1/s} on the
    lower half and b - c = (b - a) d^{1/t} on the upper half, which turns
    both power singularities into smooth integrands.
    """
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-11)
    rel = []
    for b in np.atleast_1d(bs):
        gap = b - a

        def left(w):
            c = a + gap * np.asarray(w, dtype=float) ** (1.0 / s)
            return _smooth_D(P, s, a, c) * _kernel_at(P, t, c, b) * gap ** s / s

        def right(d):
            c = b - gap * np.asarray(d, dtype=float) ** (1.0 / t)
            return transition_kernel(P, s, a, c) * _smooth_D(P, t, c, b) * gap ** t / t

        comp = (integrate(left, 0.0, 0.5 ** s, cfg).value
                + integrate(right, 0.0, 0.5 ** t, cfg).value)
        direct = transition_kernel(P, s + t, a, b)
        rel.append(abs(comp - direct) / direct)
    # atoms: p_{s+t}(a) = p_s(a) + int D_s(a, c) p_t(c) dc
    L = P.T - a

    def g(d):
        # c - a = L w^{1/s} with d = 1 - w the distance to the c = T end
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore"):
            c = P.T - L * -np.expm1(np.log1p(-d) / s)
        return _smooth_D(P, s, a, c) * np.array([transition_atom(P, t, cv) for cv in np.atleast_1d(c)])

    mass = L ** s / s * (integrate_log_singular(g, 0.0, 0.5, cfg, singular="a", distance=True).value
                         + integrate_log_singular(lambda w: g(1.0 - np.asarray(w)), 0.0, 0.5, cfg,
                                                  singular="a").value)
    atom_res = transition_atom(P, s, a) + mass - transition_atom(P, s + t, a)
    return max(rel), atom_res


def _smooth_D(P, s, a, c):
    # D_s(a, c) (c - a)^{1-s}, bounded at c = a
    c = np.asarray(c, dtype=float)
    ok = c < P.T
    cc = np.where(ok, c, a)
    val = nu(np.clip((P.T - cc) * P.lam, 0, None)) / nu((P.T - a) * P.lam) \
        * math.exp(s * math.log(P.lam) - math.lgamma(s))
    return np.where(ok, val, 0.0)


def _kernel_at(P, t, c, b):
    # D_t(c, b) for an array of starting points c and a fixed b
    c = np.asarray(c, dtype=float)
    return nu((P.T - b) * P.lam) / nu((P.T - c) * P.lam) * np.exp(
        (t - 1) * np.log(b - c) + t * math.log(P.lam) - math.lgamma(t))


def renewal_density(P: ModelParams, a: float, b):
    """lam nu'((b-a) lam) nu((T-b) lam) / nu((T-a) lam) for a <= b < T."""
    b = np.asarray(b, dtype=float)
    ok = (b > a) & (b < P.T)
    bb = np.where(ok, b, a + 0.5 * (P.T - a))
    val = P.lam * nu_prime((bb - a) * P.lam) * nu((P.T - bb) * P.lam) / nu((P.T - a) * P.lam)
    out = np.where(ok, val, 0.0)
    return float(out) if out.ndim == 0 else out


def renewal_bin_masses(P: ModelParams, a: float, edges, cfg=None) -> np.ndarray:
    """Expected local time spent in each bin [edges[i], edges[i+1]) starting from a."""
    cfg = cfg or QuadConfig(abs_tol=1e-13, rel_tol=1e-10)
    out = []
    lam, T = P.lam, P.T
    na = nu((T - a) * lam)
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= a:
            # the nu' singularity sits at b = a
            G = lambda y: nu((T - a - np.asarray(y)) * lam) / na
            out.append(lam * nu_prime_convolution(G, hi - a, lam, cfg))
        else:
            out.append(integrate_log_singular(lambda b: renewal_density(P, a, b), lo, hi, cfg,
                                              singular="b" if hi >= T else "a").value)
    return np.array(out)


def pre_death_density(P: ModelParams, a: float, b):
    """Density of the last position before absorption: renewal density times death rate."""
    b = np.asarray(b, dtype=float)
    ok = (b > a) & (b < P.T)
    bb = np.where(ok, b, a + 0.5 * (P.T - a))
    out = np.where(ok, P.lam * nu_prime((bb - a) * P.lam) / nu((P.T - a) * P.lam), 0.0)
    return float(out) if out.ndim == 0 else out


def mean_terminal_local_time(P: ModelParams, a: float = 0.0) -> float:
    """E[S] from a: theta nu'(theta)/nu(theta) with theta = (T - a) lam."""
    th = (P.T - a) * P.lam
    return th * nu_prime(th) / nu(th)


def escape_atom(P: ModelParams, eps: float) -> float:
    """Probability that the first position beyond eps, starting from 0, is T."""
    return nu(eps * P.lam) / nu(P.T * P.lam)


def escape_law(P: ModelParams, eps: float, b):
    """Density of the first position beyond eps at b in (eps, T), starting from 0."""
    vals = []
    for bv in np.atleast_1d(np.asarray(b, dtype=float)):
        if not eps < bv < P.T:
            vals.append(0.0)
            continue
        inner = nu_prime_convolution(lambda x: 1.0 / (bv - np.asarray(x)), eps, P.lam)
        vals.append(nu((P.T - bv) * P.lam) / nu(P.T * P.lam) * P.lam * inner)
    out = np.array(vals)
    return float(out[0]) if np.ndim(b) == 0 else out


def escape_bin_masses(P: ModelParams, eps: float, edges, cfg=None) -> np.ndarray:
    cfg = cfg or QuadConfig(abs_tol=1e-12, rel_tol=1e-9)
    return np.array([integrate_log_singular(lambda b: escape_law(P, eps, b), lo, hi, cfg,
                                            singular="both").value
                     for lo, hi in zip(edges[:-1], edges[1:])])


def escape_total_mass(P: ModelParams, eps: float) -> float:
    """Atom plus integrated density of the escape law (should be one)."""
    edges = np.linspace(eps, P.T, 5)
    return escape_atom(P, eps) + float(np.sum(escape_bin_masses(P, eps, edges)))


# --------------------------------------------------------------------------
# sampling

@numba.njit(cache=True)
def _log_vp_unnorm(lt, r):
    return r * lt - math.lgamma(r + 1.0)


@numba.njit(cache=True)
def _atom_gl(lt, s):
    # int_0^s theta^r / Gamma(r+1) dr on 8 Gauss-Legendre nodes (the integrand is entire in r)
    tot = 0.0
    for j in range(_GL_X.shape[0]):
        tot += _GL_W[j] * math.exp(_log_vp_unnorm(lt, s * _GL_X[j]))
    return s * tot


@numba.njit(cache=True)
def _death_offset(lt, ds, u):
    # local time of death inside the step: VP law truncated to [0, ds], by bisection
    target = u * _atom_gl(lt, ds)
    lo, hi = 0.0, ds
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _atom_gl(lt, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@numba.njit(cache=True)
def _bracket(x, lx, tv):
    # lower and upper bounds for nu(x) from a monotone table
    if x <= 0.0:
        return 0.0, 0.0
    l = math.log(x)
    k = np.searchsorted(lx, l, side="right")
    if k == 0:
        return 0.0, tv[0]
    if k >= lx.shape[0]:
        return tv[-1], np.inf
    return tv[k - 1], tv[k]


@numba.njit(cache=True)
def _step(T, lam, a, ds, k0, k1, idx, nua, lx, tv):
    """One local-time step from a < T.

    nua is nu((T-a) lam) or -1 if not yet computed. Exact values are only
    computed when the table bounds cannot settle a comparison.
    Returns (b, death offset or -1, idx, status, nua, nub or -1).
    """
    theta = (T - a) * lam
    lt = math.log(theta)
    atom = _atom_gl(lt, ds)
    if nua > 0.0:
        alo = ahi = nua
    else:
        alo, ahi = _bracket(theta, lx, tv)
    u = uniform_at(k0, k1, idx)
    idx += np.uint64(1)
    if u * alo >= atom:
        dies = False
    elif u * ahi < atom:
        dies = True
    else:
        nua = nu_scalar(theta)
        alo = ahi = nua
        dies = u * nua < atom
    if dies:
        off = _death_offset(lt, ds, uniform_at(k0, k1, idx))
        idx += np.uint64(1)
        return T, off, idx, 0, nua, -1.0
    inv = 1.0 / ds
    for _ in range(MAX_REJECTIONS):
        u = uniform_at(k0, k1, idx)
        idx += np.uint64(1)
        b = a + (T - a) * u ** inv
        if b == a:
            return b, -1.0, idx, 0, nua, nua
        if b >= T:
            continue
        v = uniform_at(k0, k1, idx)
        idx += np.uint64(1)
        xb = (T - b) * lam
        blo, bhi = _bracket(xb, lx, tv)
        if v * ahi <= blo:
            return b, -1.0, idx, 0, nua, -1.0
        if v * alo > bhi:
            continue
        if nua <= 0.0:
            nua = nu_scalar(theta)
            alo = ahi = nua
        nub = nu_scalar(xb)
        if v * nua <= nub:
            return b, -1.0, idx, 0, nua, nub
    return a, -1.0, idx, 1, nua, -1.0


@functools.lru_cache(maxsize=16)
def _nu_table(theta_max: float):
    # log-spaced nodes: coarse far below theta_max, fine in the last 50 e-folds
    top = math.log(theta_max) + 1e-12
    mid = max(top - 50.0, math.log(1e-300))
    lx = np.concatenate([np.linspace(math.log(1e-300), mid, 2048, endpoint=False),
                         np.linspace(mid, top, 16384)])
    tv = np.asarray(nu(np.exp(lx)), dtype=float)
    # rounding could break monotonicity by an ulp; widen instead
    return lx, np.maximum.accumulate(tv)


@numba.njit(cache=True)
def _run_paths(T, lam, a0, ds, seed, ids, eps, edges, occ, S, escape, status, lx, tv, stop):
    nb = edges.shape[0] - 1
    for i in range(ids.shape[0]):
        k0 = seed
        k1 = ids[i]
        idx = np.uint64(0)
        a = a0
        s = 0.0
        esc = -1.0
        nua = -1.0
        while a < T:
            b, off, idx, st, nua, nub = _step(T, lam, a, ds, k0, k1, idx, nua, lx, tv)
            if st != 0:
                status[i] = 1
                break
            if off >= 0.0:
                # dies inside the step: a is occupied for the partial step
                _bin_add(edges, occ, i, a, off, nb)
                S[i] = s + off
                if esc < 0.0 and a <= eps:
                    esc = T
                a = T
                break
            # trapezoid: half the step at each end of it
            _bin_add(edges, occ, i, a, 0.5 * ds, nb)
            _bin_add(edges, occ, i, b, 0.5 * ds, nb)
            if esc < 0.0 and a <= eps < b:
                esc = b
                if stop:
                    S[i] = np.nan
                    a = b
                    break
            a = b
            nua = nub
            s += ds
        if a0 >= T:
            S[i] = 0.0
            esc = T
        escape[i] = esc


@numba.njit(cache=True)
def _bin_add(edges, occ, i, x, w, nb):
    if nb <= 0 or x < edges[0] or x >= edges[nb]:
        return
    k = np.searchsorted(edges, x, side="right") - 1
    occ[i, k] += w


@dataclass
class JumpEnsemble:
    S: np.ndarray
    escape: np.ndarray
    occupation: np.ndarray
    edges: np.ndarray


def simulate_ensemble(P: ModelParams, n_paths: int, delta_s: float | None = None, seed: int = 0,
                      a0: float = 0.0, eps: float = 0.0, edges=None, stream_id: int = 0,
                      stop_at_escape: bool = False) -> JumpEnsemble:
    """Simulate n_paths independent paths, path i on sub-stream i.

    Records the terminal local time S, the first position beyond eps
    (T if absorbed first), and local time spent in each bin of ``edges``.
    With ``stop_at_escape`` a path ends once it passes eps; S is then NaN
    unless it died first.
    """
    ds = delta_s if delta_s is not None else default_delta_s(P)
    if ds <= 0:
        raise ValueError("delta_s must be positive")
    edges = np.asarray(edges if edges is not None else [0.0, P.T], dtype=float)
    ids = substream_ids(stream_id, n_paths)
    occ = np.zeros((n_paths, len(edges) - 1))
    S = np.zeros(n_paths)
    esc = np.zeros(n_paths)
    status = np.zeros(n_paths, dtype=np.int64)
    lx, tv = _nu_table(P.T * P.lam)
    _run_paths(P.T, P.lam, a0, ds, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), ids, eps, edges, occ, S, esc,
               status, lx, tv, stop_at_escape)
    if np.any(status):
        raise RejectionStall("acceptance loop exceeded 1e6 proposals")
    return JumpEnsemble(S, esc, occ, edges)


def step_sample(P: ModelParams, a: float, delta_s: float, stream: RngStream):
    """One exact local-time step of size delta_s from a; returns (new position, stream)."""
    if delta_s <= 0:
        raise ValueError("delta_s must be positive")
    if a >= P.T:
        return P.T, stream
    k0, k1 = stream.key
    lx, tv = _nu_table(P.T * P.lam)
    b, _, idx, st, _, _ = _step(P.T, P.lam, a, delta_s, k0, k1, np.uint64(stream.counter), -1.0, lx, tv)
    if st:
        raise RejectionStall("acceptance loop exceeded 1e6 proposals")
    return float(b), RngStream(stream.seed, stream.stream_id, int(idx))


def step_samples(P: ModelParams, a: float, delta_s: float, stream: RngStream, n: int):
    """n independent steps from a, on consecutive words of one stream."""
    if delta_s <= 0:
        raise ValueError("delta_s must be positive")
    if a >= P.T:
        return np.full(n, P.T), stream
    lx, tv = _nu_table(P.T * P.lam)
    k0, k1 = stream.key
    out = np.empty(n)
    idx, st = _step_many(P.T, P.lam, a, delta_s, k0, k1, np.uint64(stream.counter), lx, tv, out)
    if st:
        raise RejectionStall("acceptance loop exceeded 1e6 proposals")
    return out, RngStream(stream.seed, stream.stream_id, int(idx))


@numba.njit(cache=True)
def _step_many(T, lam, a, ds, k0, k1, idx, lx, tv, out):
    nua = -1.0
    for i in range(out.shape[0]):
        b, off, idx, st, nua, nub = _step(T, lam, a, ds, k0, k1, idx, nua, lx, tv)
        if st:
            return idx, 1
        out[i] = b
    return idx, 0


def simulate_path(P: ModelParams, a0: float, delta_s: float, stream: RngStream,
                  max_steps: int = 10_000_000) -> JumpPath:
    """Skeleton of one path at local times k delta_s, ending at the exact S."""
    if a0 >= P.T:
        return JumpPath(np.array([0.0]), np.array([P.T]), 0.0)
    k0, k1 = stream.key
    idx = np.uint64(stream.counter)
    a, s = a0, 0.0
    times, pos = [0.0], [a0]
    lx, tv = _nu_table(P.T * P.lam)
    nua = -1.0
    for _ in range(max_steps):
        b, off, idx, st, nua, nub = _step(P.T, P.lam, a, delta_s, k0, k1, np.uint64(idx), nua, lx, tv)
        if st:
            raise RejectionStall("acceptance loop exceeded 1e6 proposals")
        if off >= 0:
            times.append(s + off)
            pos.append(P.T)
            return JumpPath(np.array(times), np.array(pos), s + off)
        a, nua = b, nub
        s += delta_s
        times.append(s)
        pos.append(a)
    return JumpPath(np.array(times), np.array(pos), None)


# --------------------------------------------------------------------------
# change of parameter

def rn_weight(P: ModelParams, lam_prime: float, eta0: float, S) -> RNWeight | np.ndarray:
    """Density of the lam' path law against the lam one, as a function of (eta0, S)."""
    if lam_prime <= 0:
        raise ValueError("lambda' must be positive")
    L = P.T - eta0
    base = nu(L * P.lam) / nu(L * lam_prime)
    w = base * np.exp(np.asarray(S, dtype=float) * math.log(lam_prime / P.lam))
    if np.ndim(S) == 0:
        return RNWeight(P.lam, lam_prime, eta0, float(S), float(w))
    return w


def rn_reweight_check(P: ModelParams, lam_prime: float, functional, n_paths: int = 10_000,
                      seed: int = 0, delta_s: float | None = None):
    """E_lam[weight f(S)] against E_lam'[f(S)], each as (mean, stderr)."""
    ens = simulate_ensemble(P, n_paths, delta_s, seed, stream_id=1)
    w = rn_weight(P, lam_prime, 0.0, ens.S)
    vals = w * functional(ens.S)
    P2 = ModelParams(P.T, lam_prime, P.quad)
    ens2 = simulate_ensemble(P2, n_paths, delta_s, seed, stream_id=2)
    vals2 = functional(ens2.S)
    return MCEstimate.from_samples(vals, seed), MCEstimate.from_samples(vals2, seed)
