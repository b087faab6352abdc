"""Monte Carlo for the conditioned radial diffusion and its local time at 0.

The radius follows dR = dw + (1/(2R) - bbar_{T-t}(R)) dt. Each step
moves the radius by an exact Bessel(2) increment (the norm of a 2D
Gaussian step) and then applies the inward drift explicitly, reflecting
at 0. The drift and H come from a table in the scaled variables
alpha = r^2 / 2u and beta = u lam (u = T - t), in which
H_u^lam(r) = Hs(alpha, beta) and bbar = B(alpha, beta) / r.

A discrete path cannot hit 0, so a ball of radius delta (one tenth of
the finest crossing level) stands in for the origin. On entering it the
downcrossing counters add the probability that the continuous path
reaches 0 before returning to eps, 1 - (1 + H(eps)) / (1 + H(delta)),
which uses 1 + H as the scale function near the origin.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np

from .kernels import ModelParams, big_H
from .numerics import (MCEstimate, QuadConfig, RngStream, block_draws, integrate_log_singular,
                       pairwise_sum, substream_ids)
from .volterra import EULER_GAMMA, exp_int_E, nu

LOG2 = math.log(2.0)
DT_FLOOR = 1e-14
SHRINK_FACTOR = 1.0 / 20.0

# table range in the scaled variables
_LA_MIN, _LA_MAX, _LA_STEP = math.log(1e-12), math.log(60.0), 0.1
_LB_MIN, _LB_STEP = math.log(1e-14), 0.1


class StepUnderflow(RuntimeError):
    pass


class ResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt_max: float = 1e-4
    dt_shrink_radius: float = 0.1
    eps_levels: tuple = (0.08, 0.04, 0.02)
    n_paths: int = 10_000
    x0: float = 1e-3

    def __post_init__(self):
        if self.dt_max <= 0 or self.dt_shrink_radius <= 0 or self.n_paths <= 0 or self.x0 <= 0:
            raise ValueError("dt_max, dt_shrink_radius, n_paths and x0 must be positive")
        e = tuple(float(v) for v in self.eps_levels)
        if any(v <= 0 for v in e) or any(a <= b for a, b in zip(e, e[1:])):
            raise ValueError("eps_levels must be positive and strictly decreasing")
        object.__setattr__(self, "eps_levels", e)

    @property
    def origin_radius(self) -> float:
        """Radius of the numerical origin: a tenth of the finest crossing level."""
        return self.eps_levels[-1] / 10.0 if self.eps_levels else 0.0


@dataclass(frozen=True)
class LocalTimeEstimates:
    eps: float
    occupation: float
    downcross_origin: float
    upcross_duration: float
    downcross_annulus: float

    def as_tuple(self):
        return self.occupation, self.downcross_origin, self.upcross_duration, self.downcross_annulus


@dataclass
class DiffusionPath:
    params: ModelParams
    times: np.ndarray
    radii: np.ndarray
    origin_radius: float
    drift: bool = True
    underflow: bool = False
    seed: int = 0
    # uniforms driving the bridge minimum / maximum of each step (len(times) - 1)
    bridge_min: np.ndarray | None = None
    bridge_max: np.ndarray | None = None


# --------------------------------------------------------------------------
# H and drift in scaled variables

def scaled_H(alpha, beta: float, cfg: QuadConfig | None = None):
    """Hs(alpha, beta) and D = -alpha dHs/dalpha for an array of alpha at one beta.

    Hs = nu(beta) E(alpha) + int_0^1 e^{-alpha/v} (nu((1-v) beta) - nu(beta)) dv / v,
    D = nu(beta) e^{-alpha} + int_0^1 (alpha/v^2) e^{-alpha/v} (nu((1-v) beta) - nu(beta)) dv.
    """
    cfg = cfg or QuadConfig(abs_tol=1e-14, rel_tol=1e-10)
    al = np.atleast_1d(np.asarray(alpha, dtype=float))
    nb = nu(beta)

    def f(v):
        v = np.asarray(v, dtype=float)
        diff = (nu((1.0 - v) * beta) - nb) / v
        with np.errstate(under="ignore"):
            e = np.exp(-al[None, :] / v[:, None])
        g = e * diff[:, None]
        return np.concatenate([g, g * (al[None, :] / v[:, None])], axis=1)

    vals = integrate_log_singular(f, 0.0, 1.0, cfg, singular="both").value
    m = al.size
    with np.errstate(under="ignore"):
        H = nb * exp_int_E(al) + vals[:m]
        D = nb * np.exp(-al) + vals[m:]
    return H, D


@dataclass(frozen=True)
class DriftTable:
    la0: float
    dla: float
    lb0: float
    dlb: float
    G: np.ndarray   # Hs / nu(beta), shape (n_alpha, n_beta)
    B: np.ndarray
    nu_beta: np.ndarray  # nu on a grid ten times finer in log beta

    def arrays(self):
        return self.la0, self.dla, self.lb0, self.dlb, self.G, self.B, self.nu_beta

    def __call__(self, alpha: float, beta: float):
        return _table_lookup(*self.arrays(), float(alpha), float(beta))


def drift_table(beta_max: float) -> DriftTable:
    """Table covering beta up to beta_max, rounded up to a power of two for reuse.

    Built tables are kept on disk under $VOLTERRA_CACHE_DIR (default
    ~/.cache/volterra_lt); building one takes tens of seconds.
    """
    top = 2.0 ** max(0, math.ceil(math.log2(beta_max)))
    return _drift_table_cached(top)


@lru_cache(maxsize=8)
def _drift_table_cached(beta_max: float) -> DriftTable:
    cache = Path(os.environ.get("VOLTERRA_CACHE_DIR", Path.home() / ".cache" / "volterra_lt"))
    name = f"drift_v1_{_LA_MIN:.6f}_{_LA_STEP}_{_LB_MIN:.6f}_{_LB_STEP}_{beta_max:.6g}.npz"
    path = cache / name
    if path.exists():
        try:
            z = np.load(path)
            return DriftTable(_LA_MIN, _LA_STEP, _LB_MIN, _LB_STEP, z["G"], z["B"], z["nu_beta"])
        except (OSError, KeyError, ValueError):
            pass
    tab = _build_drift_table(beta_max)
    try:
        cache.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
        np.savez(tmp, G=tab.G, B=tab.B, nu_beta=tab.nu_beta)
        os.replace(tmp, path)
    except OSError:
        pass
    return tab


def _build_drift_table(beta_max: float) -> DriftTable:
    """Tables of Hs/nu(beta) and B = 2D/(1+Hs) on a log grid reaching beta_max (rounded up).

    Dividing by nu(beta) removes most of the beta dependence, so the cubic
    interpolation in log beta is accurate to about 1e-7.
    """
    lb_top = _LB_STEP * math.ceil((math.log(beta_max) + 1e-9) / _LB_STEP) + 2 * _LB_STEP
    lbs = np.arange(_LB_MIN, lb_top + 0.5 * _LB_STEP, _LB_STEP)
    las = np.arange(_LA_MIN, _LA_MAX + 0.5 * _LA_STEP, _LA_STEP)
    al = np.exp(las)
    G = np.empty((las.size, lbs.size))
    B = np.empty_like(G)
    for j, lb in enumerate(lbs):
        h, d = scaled_H(al, math.exp(lb))
        G[:, j] = h / nu(math.exp(lb))
        B[:, j] = 2.0 * d / (1.0 + h)
    fine = _LB_MIN + _LB_STEP / 10 * np.arange(10 * (lbs.size - 1) + 1)
    return DriftTable(_LA_MIN, _LA_STEP, _LB_MIN, _LB_STEP, G, B, np.asarray(nu(np.exp(fine))))


@numba.njit(cache=True, inline="always")
def _lagrange4(x):
    # weights of cubic Lagrange interpolation on nodes -1, 0, 1, 2 at x in [0, 1]
    return (-x * (x - 1.0) * (x - 2.0) / 6.0, (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0,
            -(x + 1.0) * x * (x - 2.0) / 2.0, (x + 1.0) * x * (x - 1.0) / 6.0)


@numba.njit(cache=True)
def _interp2(tab, fa, fb):
    na, nb = tab.shape
    ia = min(max(int(math.floor(fa)), 1), na - 3)
    ib = min(max(int(math.floor(fb)), 1), nb - 3)
    wa = _lagrange4(fa - ia)
    wb = _lagrange4(fb - ib)
    tot = 0.0
    for p in range(4):
        row = 0.0
        for q in range(4):
            row += wb[q] * tab[ia - 1 + p, ib - 1 + q]
        tot += wa[p] * row
    return tot


@numba.njit(cache=True)
def _interp1(vec, fb):
    n = vec.shape[0]
    ib = min(max(int(math.floor(fb)), 1), n - 3)
    w = _lagrange4(fb - ib)
    return w[0] * vec[ib - 1] + w[1] * vec[ib] + w[2] * vec[ib + 1] + w[3] * vec[ib + 2]


@numba.njit(cache=True)
def _table_lookup(la0, dla, lb0, dlb, G, B, nub, alpha, beta):
    """(Hs, B) at (alpha, beta); beyond the table Hs and B are continued by their asymptotics."""
    if beta <= 0.0:
        return 0.0, 0.0
    if alpha <= 0.0:
        return math.inf, 0.0
    la = math.log(alpha)
    if la >= la0 + (G.shape[0] - 1) * dla:
        return 0.0, 0.0
    fb = (max(math.log(beta), lb0) - lb0) / dlb
    nb = _interp1(nub, 10.0 * fb)
    if la < la0:
        # dHs/dlog(alpha) -> -nu(beta) and D -> nu(beta) as alpha -> 0
        h = nb * (_interp2(G, 0.0, fb) + la0 - la)
        return h, 2.0 * nb / (1.0 + h)
    fa = (la - la0) / dla
    return nb * _interp2(G, fa, fb), _interp2(B, fa, fb)


@numba.njit(cache=True)
def _drift_lookup(la0, dla, lb0, dlb, G, B, nub, alpha, beta):
    """B alone, skipping the Hs interpolation inside the table."""
    if beta <= 0.0 or alpha <= 0.0:
        return 0.0
    la = math.log(alpha)
    if la >= la0 + (G.shape[0] - 1) * dla:
        return 0.0
    if la < la0:
        return _table_lookup(la0, dla, lb0, dlb, G, B, nub, alpha, beta)[1]
    fb = (max(math.log(beta), lb0) - lb0) / dlb
    return _interp2(B, (la - la0) / dla, fb)


# --------------------------------------------------------------------------
# stepping

@numba.njit(cache=True)
def _step_size(r, t, T, dt_max, shrink, delta, stop_at):
    dt = dt_max
    if r < shrink:
        rr = max(r, delta)
        dt = min(dt, SHRINK_FACTOR * rr * rr)
    if t < stop_at:
        dt = min(dt, stop_at - t)
    return dt


@numba.njit(cache=True)
def _advance(r, t, dt, T, lam, z1, z2, drift, delta, la0, dla, lb0, dlb, G, B, nub):
    # exact Bessel(2) move, then the inward drift evaluated at the start point
    sd = math.sqrt(dt)
    x = r + sd * z1
    y = sd * z2
    rn = math.sqrt(x * x + y * y)
    if drift and t < T:
        u = T - t
        rd = max(r, delta)
        b = _drift_lookup(la0, dla, lb0, dlb, G, B, nub, rd * rd / (2.0 * u), u * lam)
        rn -= b / rd * dt
        if rn < 0.0:
            rn = -rn
    return rn


@numba.njit(cache=True)
def _H_at(r, t, T, lam, la0, dla, lb0, dlb, G, B, nub):
    if t >= T:
        return 0.0
    u = T - t
    h, _ = _table_lookup(la0, dla, lb0, dlb, G, B, nub, r * r / (2.0 * u), u * lam)
    return h


@numba.njit(cache=True)
def _origin_prob(r, eps, t, T, lam, la0, dla, lb0, dlb, G, B, nub):
    # chance that the continuous path at radius r reaches 0 before eps
    if t >= T or r >= eps:
        return 0.0
    he = _H_at(eps, t, T, lam, la0, dla, lb0, dlb, G, B, nub)
    hr = _H_at(r, t, T, lam, la0, dla, lb0, dlb, G, B, nub)
    return 1.0 - (1.0 + he) / (1.0 + hr)


# per-level estimator state, columns of st:
# 0 occupation time, 1 origin count, 2 upcrossing duration, 3 annulus count,
# 4 origin armed, 5 pending weight, 6 time of last origin entry, 7 annulus armed
_NSTATE = 8


@numba.njit(cache=True)
def _levels_start(st, eps, r0, delta, T, lam, la0, dla, lb0, dlb, G, B, nub):
    for k in range(eps.shape[0]):
        for j in range(_NSTATE):
            st[k, j] = 0.0
        st[k, 4] = 1.0
        st[k, 7] = 1.0
        if r0 <= delta:
            q = _origin_prob(r0, eps[k], 0.0, T, lam, la0, dla, lb0, dlb, G, B, nub)
            st[k, 1] += q
            st[k, 5] = q
            st[k, 6] = 0.0
            st[k, 4] = 0.0
        if r0 <= eps[k]:
            st[k, 3] += 1.0
            st[k, 7] = 0.0


@numba.njit(cache=True)
def _went_below(a, r0, r1, dt, u):
    # did the path reach a during the step? endpoint test, else Brownian-bridge minimum
    if r1 <= a:
        return True
    if r0 <= a:
        return False
    expo = 2.0 * (r0 - a) * (r1 - a) / dt
    return expo < 50.0 and u < math.exp(-expo)


@numba.njit(cache=True)
def _went_above(b, r0, r1, dt, v):
    if r1 >= b:
        return True
    if r0 >= b:
        return False
    expo = 2.0 * (b - r0) * (b - r1) / dt
    return expo < 50.0 and v < math.exp(-expo)


@numba.njit(cache=True)
def _event_time(a, r0, r1, t1, dt):
    # crossing of level a dated by linear interpolation of the distances to it
    d0 = abs(r0 - a)
    d1 = abs(r1 - a)
    if d0 + d1 <= 0.0:
        return t1
    return t1 - dt * d1 / (d0 + d1)


@numba.njit(cache=True)
def _levels_update(st, eps, r0, r1, t1, dt, u, v, delta, T, lam, la0, dla, lb0, dlb, G, B, nub):
    # u and v drive the bridge minimum and maximum of the step. A step that dips
    # below a lower level and ends above the upper one rearms at once.
    for k in range(eps.shape[0]):
        e = eps[k]
        st[k, 0] += 0.5 * dt * ((r0 <= e) + (r1 <= e))
        if st[k, 4] > 0.0:
            if _went_below(delta, r0, r1, dt, u):
                tm = _event_time(delta, r0, r1, t1, dt)
                q = _origin_prob(delta, e, tm, T, lam, la0, dla, lb0, dlb, G, B, nub)
                st[k, 1] += q
                if r1 < e:
                    st[k, 5] = q
                    st[k, 6] = tm
                    st[k, 4] = 0.0
        elif _went_above(e, r0, r1, dt, v):
            st[k, 2] += st[k, 5] * (_event_time(e, r0, r1, t1, dt) - st[k, 6])
            st[k, 4] = 1.0
        if st[k, 7] > 0.0:
            if _went_below(e, r0, r1, dt, u):
                st[k, 3] += 1.0
                if r1 < 2.0 * e:
                    st[k, 7] = 0.0
        elif _went_above(2.0 * e, r0, r1, dt, v):
            st[k, 7] = 1.0


@numba.njit(cache=True)
def _levels_finish(st, eps, t, out):
    # out[k] = (occupation, downcross_origin, upcross_duration, downcross_annulus)
    for k in range(eps.shape[0]):
        e = eps[k]
        le = math.log(1.0 / e)
        dur = st[k, 2]
        if st[k, 4] == 0.0:
            dur += st[k, 5] * (t - st[k, 6])
        out[k, 0] = st[k, 0] / (2.0 * e * e * le * le)
        out[k, 1] = st[k, 1] / (2.0 * le)
        out[k, 2] = dur / (e * e * le)
        out[k, 3] = math.log(2.0) / (2.0 * le * le) * st[k, 3]


@numba.njit(cache=True)
def _localtime_paths(T, lam, x0, dt_max, shrink, eps, delta, seed, ids, la0, dla, lb0, dlb, G, B, nub,
                     out, flags):
    nl = eps.shape[0]
    st = np.zeros((nl, _NSTATE))
    for i in range(ids.shape[0]):
        k1 = ids[i]
        blk = np.uint64(0)
        r = x0
        t = 0.0
        _levels_start(st, eps, r, delta, T, lam, la0, dla, lb0, dlb, G, B, nub)
        while t < T:
            dt = _step_size(r, t, T, dt_max, shrink, delta, T)
            if dt < DT_FLOOR:
                flags[i] = 1
                break
            z1, z2, u, v = block_draws(seed, k1, blk)
            blk += np.uint64(1)
            rn = _advance(r, t, dt, T, lam, z1, z2, True, delta, la0, dla, lb0, dlb, G, B, nub)
            tn = T if T - (t + dt) < 1e-15 * T else t + dt
            _levels_update(st, eps, r, rn, tn, tn - t, u, v, delta, T, lam, la0, dla, lb0, dlb, G, B, nub)
            r = rn
            t = tn
        _levels_finish(st, eps, min(t, T), out[i])


@numba.njit(cache=True)
def _record_path(T, lam, x0, t_end, dt_max, shrink, delta, drift, k0, k1, blk, la0, dla, lb0, dlb, G, B, nub,
                 times, radii, umin, vmax):
    # returns (number of points, status): 0 done, 1 step underflow, 2 buffers full
    r = x0
    t = 0.0
    times[0] = 0.0
    radii[0] = r
    n = 1
    while t < t_end:
        if n >= times.shape[0]:
            return n, 2
        dt = _step_size(r, t, T, dt_max, shrink, delta, T if t < T else t_end)
        if dt < DT_FLOOR:
            return n, 1
        z1, z2, u, v = block_draws(k0, k1, blk)
        blk += np.uint64(1)
        umin[n] = u
        vmax[n] = v
        r = _advance(r, t, dt, T, lam, z1, z2, drift, delta, la0, dla, lb0, dlb, G, B, nub)
        t = t + dt
        if t < T and T - t < 1e-15 * T:
            t = T
        times[n] = t
        radii[n] = r
        n += 1
    return n, 0


@numba.njit(cache=True)
def _hitting_paths(T, lam, x0, eps, dt_max, shrink, drift, seed, ids, la0, dla, lb0, dlb, G, B, nub,
                   h0, out):
    # drift=True: indicator of reaching eps before T under the conditioned law;
    # drift=False: plain Bessel(2) weighted by (1 + H_{T-S}(eps)) / (1 + H_T(x0)) at the hit
    for i in range(ids.shape[0]):
        k1 = ids[i]
        blk = np.uint64(0)
        r = x0
        t = 0.0
        val = 0.0
        while t < T:
            dt = _step_size(r, t, T, dt_max, shrink, 0.0, T)
            z1, z2, u, _ = block_draws(seed, k1, blk)
            blk += np.uint64(1)
            rn = _advance(r, t, dt, T, lam, z1, z2, drift, 0.0, la0, dla, lb0, dlb, G, B, nub)
            tn = t + dt
            hit = rn <= eps
            if not hit:
                # Brownian-bridge chance of a dip below eps inside the step
                expo = 2.0 * (r - eps) * (rn - eps) / dt
                hit = expo < 50.0 and u < math.exp(-expo)
            if hit:
                if drift:
                    val = 1.0
                else:
                    val = (1.0 + _H_at(eps, min(tn, T), T, lam, la0, dla, lb0, dlb, G, B, nub)) / h0
                break
            r = rn
            t = tn
        out[i] = val


@numba.njit(cache=True)
def _bessel_occupation_paths(x, ell, dt_max, seed, ids, edges, occ):
    nb = edges.shape[0] - 1
    for i in range(ids.shape[0]):
        k1 = ids[i]
        blk = np.uint64(0)
        r = x
        while True:
            dt = min(dt_max, SHRINK_FACTOR * max(r * r, 1e-12))
            z1, z2, u, _ = block_draws(seed, k1, blk)
            blk += np.uint64(1)
            sd = math.sqrt(dt)
            xx = r + sd * z1
            yy = sd * z2
            rn = math.sqrt(xx * xx + yy * yy)
            exit_ = rn >= ell
            if not exit_:
                expo = 2.0 * (ell - r) * (ell - rn) / dt
                exit_ = expo < 50.0 and u < math.exp(-expo)
            # trapezoid split of the step between its end points
            for rr in (r, min(rn, ell)):
                if rr < edges[nb]:
                    k = np.searchsorted(edges, rr, side="right") - 1
                    if 0 <= k < nb:
                        occ[i, k] += 0.5 * dt
            if exit_:
                break
            r = rn


# --------------------------------------------------------------------------
# public interface

def _tab(P: ModelParams) -> DriftTable:
    return drift_table(P.T * P.lam)


def _check_resolution(cfg: SimConfig, levels):
    for e in levels:
        if cfg.dt_max > e * e / 10.0 * (1 + 1e-9):
            warnings.warn(f"dt_max={cfg.dt_max:g} exceeds eps^2/10 at eps={e:g}; crossings may be missed",
                          ResolutionWarning, stacklevel=3)


def simulate_radial(P: ModelParams, cfg: SimConfig, stream: RngStream, t_end: float | None = None,
                    drift: bool = True) -> DiffusionPath:
    """One path of the conditioned radius on [0, t_end] (default T).

    Beyond T the drift vanishes and the radius is a Bessel(2) path. With
    drift=False the whole path is Bessel(2). A path whose step size
    underflows is returned truncated with ``underflow`` set.
    """
    t_end = P.T if t_end is None else t_end
    tab = _tab(P)
    k0, k1 = stream.key
    size = 1 << 14
    while True:
        times = np.empty(size)
        radii = np.empty(size)
        umin = np.empty(size)
        vmax = np.empty(size)
        n, status = _record_path(P.T, P.lam, cfg.x0, t_end, cfg.dt_max, cfg.dt_shrink_radius,
                                 cfg.origin_radius, drift, k0, k1, np.uint64(-(-stream.counter // 4)),
                                 *tab.arrays(), times, radii, umin, vmax)
        if status != 2:
            break
        size *= 4
    return DiffusionPath(P, times[:n].copy(), radii[:n].copy(), cfg.origin_radius, drift, status == 1,
                         stream.seed, umin[1:n].copy(), vmax[1:n].copy())


def estimate_localtime(path: DiffusionPath, eps: float, t: float | None = None) -> LocalTimeEstimates:
    """The four local-time estimators at level eps from a recorded path, at time t (default T)."""
    P = path.params
    t = min(P.T, path.times[-1]) if t is None else t
    if path.times.size > 1 and np.max(np.diff(path.times)) > eps * eps / 10.0 * (1 + 1e-9):
        warnings.warn(f"path steps exceed eps^2/10 at eps={eps:g}; crossings may be missed",
                      ResolutionWarning, stacklevel=2)
    tab = _tab(P)
    e = np.array([float(eps)])
    out = np.zeros((1, 4))
    m = path.times.size - 1
    # without recorded uniforms the bridge tests are switched off (u = v = 1)
    bu = path.bridge_min if path.bridge_min is not None else np.ones(m)
    bv = path.bridge_max if path.bridge_max is not None else np.ones(m)
    _estimate_on_path(path.times, path.radii, bu, bv, t, e,
                      path.origin_radius if path.origin_radius > 0 else eps / 10.0, P.T, P.lam, *tab.arrays(), out)
    return LocalTimeEstimates(float(eps), *map(float, out[0]))


@numba.njit(cache=True)
def _estimate_on_path(times, radii, bu, bv, t_stop, eps, delta, T, lam, la0, dla, lb0, dlb, G, B, nub, out):
    st = np.zeros((eps.shape[0], _NSTATE))
    _levels_start(st, eps, radii[0], delta, T, lam, la0, dla, lb0, dlb, G, B, nub)
    t_last = times[0]
    for j in range(1, times.shape[0]):
        if times[j] > t_stop:
            break
        _levels_update(st, eps, radii[j - 1], radii[j], times[j], times[j] - times[j - 1], bu[j - 1], bv[j - 1],
                       delta, T, lam,
                       la0, dla, lb0, dlb, G, B, nub)
        t_last = times[j]
    _levels_finish(st, eps, t_last, out)


@dataclass
class LocalTimeEnsemble:
    eps_levels: tuple
    values: np.ndarray     # (n_paths, n_levels, 4)
    underflow: np.ndarray  # paths whose step size underflowed
    seed: int

    def estimate(self, level: int, which: int) -> MCEstimate:
        return MCEstimate.from_samples(self.values[:, level, which], self.seed)

    def means(self) -> np.ndarray:
        n = self.values.shape[0]
        return np.array([[pairwise_sum(self.values[:, k, j]) / n for j in range(4)]
                         for k in range(self.values.shape[1])])


ESTIMATOR_NAMES = ("occupation", "downcross_origin", "upcross_duration", "downcross_annulus")


def localtime_ensemble(P: ModelParams, cfg: SimConfig, seed: int = 0, stream_id: int = 0,
                       workers: int = 1) -> LocalTimeEnsemble:
    """All four estimators at every level of cfg.eps_levels, at time T, one path per sub-stream."""
    _check_resolution(cfg, cfg.eps_levels)
    ids = substream_ids(stream_id, cfg.n_paths)
    chunks = np.array_split(np.arange(cfg.n_paths), max(1, workers))
    args = [(P.T, P.lam, cfg, seed, ids[c]) for c in chunks if c.size]
    if workers > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_localtime_chunk, args))
    else:
        parts = [_localtime_chunk(a) for a in args]
    vals = np.concatenate([p[0] for p in parts])
    flags = np.concatenate([p[1] for p in parts])
    return LocalTimeEnsemble(cfg.eps_levels, vals, flags.astype(bool), seed)


def _localtime_chunk(args):
    T, lam, cfg, seed, ids = args
    tab = drift_table(T * lam)
    eps = np.array(cfg.eps_levels)
    out = np.zeros((ids.size, eps.size, 4))
    flags = np.zeros(ids.size, dtype=np.int64)
    _localtime_paths(T, lam, cfg.x0, cfg.dt_max, cfg.dt_shrink_radius, eps, cfg.origin_radius,
                     np.uint64(seed & 0xFFFFFFFFFFFFFFFF), ids, *tab.arrays(), out, flags)
    return out, flags


def hitting_prob_mc(P: ModelParams, eps: float, cfg: SimConfig, seed: int = 0, stream_id: int = 11) -> MCEstimate:
    """P[radius reaches eps before T] from cfg.x0, by simulating the conditioned radius."""
    return _hitting(P, eps, cfg, seed, stream_id, True)


def hitting_prob_is(P: ModelParams, eps: float, cfg: SimConfig, seed: int = 0, stream_id: int = 12) -> MCEstimate:
    """Same probability from plain Bessel(2) paths weighted at the hitting time S by
    (1 + H_{T-S}(eps)) / (1 + H_T(x0))."""
    return _hitting(P, eps, cfg, seed, stream_id, False)


def _hitting(P, eps, cfg, seed, stream_id, drift):
    if not cfg.x0 > eps:
        raise ValueError("x0 must exceed eps")
    tab = _tab(P)
    ids = substream_ids(stream_id, cfg.n_paths)
    out = np.zeros(cfg.n_paths)
    h0 = 1.0 + float(big_H(P.T, P.lam, cfg.x0))
    _hitting_paths(P.T, P.lam, cfg.x0, eps, cfg.dt_max, cfg.dt_shrink_radius, drift,
                   np.uint64(seed & 0xFFFFFFFFFFFFFFFF), ids, *tab.arrays(), h0, out)
    return MCEstimate.from_samples(out, seed)


def origin_visit_prob(P: ModelParams, x0: float) -> float:
    """Probability that the conditioned path from radius x0 visits the origin, H/(1+H)."""
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    h = float(big_H(P.T, P.lam, x0))
    return h / (1.0 + h)


def bessel_green(ell: float, x: float, y: float) -> float:
    """Green's function of Bessel(2) killed at ell: expected time density at y from x."""
    if not (0 <= x <= ell and 0 <= y <= ell):
        raise ValueError("x and y must lie in [0, ell]")
    if y == 0:
        return 0.0
    if y < x:
        return 2.0 * y * math.log(ell / x)
    return 2.0 * y * math.log(ell / y)


def bessel_green_bin_masses(ell: float, x: float, edges) -> np.ndarray:
    """Integrals of y -> G(x, y) over consecutive bins, in closed form."""
    edges = np.asarray(edges, dtype=float)

    def prim(y):
        # int_0^y G(x, s) ds
        y = np.asarray(y, dtype=float)
        ys = np.where(y > 0, y, 1.0)
        above = np.where(y > 0, y * y * np.log(ell / ys), 0.0) + 0.5 * (y * y - x * x)
        below = y * y * math.log(ell / x) if x > 0 else np.zeros_like(y)
        return np.where(y <= x, below, above)

    return np.diff(prim(edges))


def bessel_green_identity_residual(eps: float, phi, cfg: QuadConfig | None = None) -> float:
    """int_0^{2 eps} G(eps, a) phi(a) da - 2 log 2 int_0^eps a phi(a) da for phi supported in [0, eps]."""
    from .numerics import integrate
    cfg = cfg or QuadConfig(abs_tol=1e-15, rel_tol=1e-13)
    ell = 2.0 * eps
    lhs = integrate(lambda a: np.array([bessel_green(ell, eps, v) for v in np.atleast_1d(a)])
                    * phi(np.asarray(a)), 0.0, ell, cfg).value
    rhs = 2.0 * LOG2 * integrate(lambda a: np.asarray(a) * phi(np.asarray(a)), 0.0, eps, cfg).value
    return lhs - rhs


def bessel_occupation_mc(x: float, ell: float, edges, n_paths: int, seed: int = 0, dt_max: float = 1e-4,
                         stream_id: int = 21) -> np.ndarray:
    """Per-path time spent in each bin by Bessel(2) from x before reaching ell."""
    edges = np.asarray(edges, dtype=float)
    occ = np.zeros((n_paths, edges.size - 1))
    _bessel_occupation_paths(x, ell, dt_max, np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                             substream_ids(stream_id, n_paths), edges, occ)
    return occ


def localtime_mgf_target(P: ModelParams, beta: float) -> float:
    """E[e^{beta L_T}] from the origin: nu(e^beta T lam) / nu(T lam)."""
    return float(nu(math.exp(beta) * P.T * P.lam) / nu(P.T * P.lam))


def localtime_law_mc(P: ModelParams, cfg: SimConfig, beta: float, seed: int = 0,
                     ensemble: LocalTimeEnsemble | None = None) -> MCEstimate:
    """E[exp(beta L_T)] with L_T replaced by the annulus-downcrossing estimator at the finest level.

    The estimator converges at a logarithmic rate in 1/eps, so the result
    carries a bias of relative order 1/log(1/eps) on top of the MC error.
    """
    ens = ensemble or localtime_ensemble(P, cfg, seed)
    vals = np.exp(beta * ens.values[:, -1, 3])
    return MCEstimate.from_samples(vals, seed)
