"""Adaptive quadrature and a counter-based random stream.

Two integrators are provided. ``integrate`` is a globally adaptive
21-point Gauss-Kronrod scheme with bisection, extended to half-lines
through x = a + t/(1-t). ``integrate_log_singular`` uses tanh-sinh
nodes clustered at a declared endpoint, which copes with integrands
like x^(d-1) or log(1/x) there.

The random stream is Philox4x64-10 keyed by (seed, stream_id). Word i
of a stream comes from counter block i // 4, so any stream can be
replayed or split without shared state.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numba
import numpy as np


class NonConvergence(RuntimeError):
    """Raised when the subdivision budget runs out above tolerance."""


class NonFinite(ArithmeticError):
    """Raised when an integrand returns NaN or an infinity at a node."""


@dataclass(frozen=True)
class QuadConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 2000

    def __post_init__(self):
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.abs_tol == 0 and self.rel_tol == 0:
            raise ValueError("one of abs_tol, rel_tol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be at least 1")

    def target(self, value: float) -> float:
        return max(self.abs_tol, self.rel_tol * abs(value))


@dataclass(frozen=True)
class QuadResult:
    value: float
    error_estimate: float
    evaluations: int
    converged: bool

    def __float__(self):
        return float(self.value)


DEFAULT_QUAD = QuadConfig()

# Kronrod 21-point abscissae on [0, 1]; odd positions carry the 10-point Gauss rule.
_XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0,
])
_WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600143867300, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
_WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
])

_KRONROD_X = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(21)
_GAUSS_W[1:10:2] = _WG
_GAUSS_W[11:20:2] = _WG[::-1]


def _evaluate(f, x):
    """Call f on an array of nodes, falling back to a scalar loop."""
    try:
        y = np.asarray(f(x), dtype=float)
    except (TypeError, ValueError):
        y = None
    if y is None or y.shape != x.shape:
        y = np.array([float(f(v)) for v in x])
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise NonFinite(f"integrand is not finite at x={bad!r}")
    return y


def _map_interval(f, a, b):
    """Return (g, lo, hi) so that the integral of f over [a, b] is that of g over [lo, hi]."""
    if math.isinf(a) and a > 0 or math.isinf(b) and b < 0:
        raise ValueError("bad integration limits")
    if math.isinf(b) and not math.isinf(a):
        def g(t):
            s = 1.0 - t
            return f(a + t / s) / (s * s)
        return g, 0.0, 1.0
    if math.isinf(a) and not math.isinf(b):
        def g(t):
            s = 1.0 - t
            return f(b - t / s) / (s * s)
        return g, 0.0, 1.0
    return f, a, b


def _kronrod(g, lo, hi):
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    y = _evaluate(g, c + h * _KRONROD_X)
    k = h * np.dot(_KRONROD_W, y)
    gauss = h * np.dot(_GAUSS_W, y)
    return k, abs(k - gauss)


def integrate(f, a: float, b: float, cfg: QuadConfig | None = None) -> QuadResult:
    """Globally adaptive Gauss-Kronrod quadrature of f over [a, b].

    ``f`` may be vectorized; it is called with arrays of 21 nodes.
    Either limit may be infinite. Raises NonConvergence when the
    subdivision budget is exhausted above tolerance.
    """
    cfg = cfg or DEFAULT_QUAD
    if a == b:
        return QuadResult(0.0, 0.0, 0, True)
    if a > b:
        r = integrate(f, b, a, cfg)
        return QuadResult(-r.value, r.error_estimate, r.evaluations, r.converged)
    if math.isinf(a) and math.isinf(b):
        left = integrate(f, -math.inf, 0.0, cfg)
        right = integrate(f, 0.0, math.inf, cfg)
        err = left.error_estimate + right.error_estimate
        value = left.value + right.value
        return QuadResult(value, err, left.evaluations + right.evaluations,
                          err <= cfg.target(value))

    g, lo, hi = _map_interval(f, a, b)
    k, e = _kronrod(g, lo, hi)
    heap = [(-e, lo, hi, k)]
    total, err, evals = k, e, 21
    while err > cfg.target(total):
        if len(heap) >= cfg.max_subdivisions:
            raise NonConvergence(
                f"error {err:.3e} above target after {len(heap)} subintervals")
        neg_e, x0, x1, kv = heapq.heappop(heap)
        mid = 0.5 * (x0 + x1)
        if not x0 < mid < x1:
            raise NonConvergence("interval became too small to bisect")
        k1, e1 = _kronrod(g, x0, mid)
        k2, e2 = _kronrod(g, mid, x1)
        evals += 42
        total += k1 + k2 - kv
        err += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, x0, mid, k1))
        heapq.heappush(heap, (-e2, mid, x1, k2))
        if len(heap) % 64 == 0:
            # resum to keep the running totals free of drift
            total = sum(item[3] for item in heap)
            err = sum(-item[0] for item in heap)
    return QuadResult(float(total), float(err), evals, True)


@lru_cache(maxsize=None)
def tanh_sinh_rule(level: int, t_max: float = 6.5):
    """Tanh-sinh nodes on [0, 1] with step 2**-level.

    Returns (t, left, right, weight): ``left`` is the distance of each
    node from 0 and ``right`` its distance from 1, both computed without
    cancellation. Nodes closer than 1e-290 to an end are dropped.
    """
    h = 2.0 ** -level
    n = int(math.ceil(t_max / h))
    t = h * np.arange(-n, n + 1)
    u = 0.5 * math.pi * np.sinh(t)
    with np.errstate(over="ignore", under="ignore"):
        left = 1.0 / (1.0 + np.exp(-2.0 * u))
        right = 1.0 / (1.0 + np.exp(2.0 * u))
        w = h * 0.25 * math.pi * np.cosh(t) / np.cosh(u) ** 2
    keep = (left > 1e-290) & (right > 1e-290) & (w > 0)
    return t[keep], left[keep], right[keep], w[keep]


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def panel_rule(edges, n: int = 10):
    """Composite Gauss-Legendre rule on the panels delimited by ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(n)
    width = np.diff(edges)
    nodes = edges[:-1, None] + width[:, None] * x[None, :]
    weights = width[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(48)


def _ts_tail(t, contrib):
    """Exponential extrapolation of the tanh-sinh sum beyond its last node.

    ``t`` increases towards the singular end and ``contrib`` has one
    column per integrand. The decay rate is read off nodes about 0.25
    apart in t, whatever the step. When three successive rates drift
    geometrically (integrands like 1/(x log^2 x), whose rate creeps up
    towards its limit) the drift is continued into the tail. Columns
    whose last contributions do not decay monotonically get no tail and
    an error of the last term.
    """
    cols = contrib.shape[1]
    if len(contrib) < 3:
        return np.zeros(cols), np.zeros(cols)
    h = t[1] - t[0]
    m = max(1, int(round(0.25 / h)))
    c3 = contrib[-1]
    if len(contrib) < 2 * m + 1:
        return np.zeros(cols), np.abs(c3) / h
    c1, c2 = contrib[-1 - 2 * m], contrib[-1 - m]
    g = m * h
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        same = (np.sign(c1) == np.sign(c2)) & (np.sign(c2) == np.sign(c3)) & (c1 != 0) & (c2 != 0) & (c3 != 0)
        k_near = np.log(c2 / c3) / g
        k_far = np.log(c1 / c2) / g
        good = same & (k_near > 0) & (k_far > 0)
        kn = np.where(good, k_near, 1.0)
        kf = np.where(good, k_far, 1.0)
        # contributions already carry the step h; the tail starts half a step out
        tail = c3 / h * np.exp(-0.5 * kn * h) / kn
        alt = c3 / h * np.exp(-0.5 * kf * h) / kf
    err = 2.0 * np.abs(tail - alt)
    if len(contrib) >= 3 * m + 1:
        c0 = contrib[-1 - 3 * m]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            k_farther = np.log(c0 / c1) / g
            d1, d2 = kf - k_farther, kn - kf
            q = np.where(d1 != 0, d2 / d1, 0.0)
            drift = good & (np.sign(c0) == np.sign(c1)) & (c0 != 0) & (q > 0) & (q < 0.9) & (d2 != 0)
            qs = np.where(drift, q, 0.5)
            kinf = kn + d2 * qs / (1.0 - qs)
            drift &= kinf > 0
            kinf = np.where(drift, kinf, 1.0)
            # rate at distance s past the last node: kinf + (kn - kinf) q^{(s + g/2)/g}
            amp = np.where(drift, kn - kinf, 0.0) * np.sqrt(qs)
            lq = np.log(qs)
            s = 0.5 * h + _LAG_X[:, None] / kinf[None, :]
            K = kinf * (s - 0.5 * h) + amp * g / lq * (np.exp(lq * s / g) - np.exp(lq * 0.5 * h / g))
            integral = np.sum(_LAG_W[:, None] * np.exp(-(K - kinf * (s - 0.5 * h))), axis=0) / kinf
            curved = c3 / h * np.exp(-0.5 * kn * h) * integral
        err = np.where(drift, np.abs(curved - tail) * qs, err)
        tail = np.where(drift, curved, tail)
    tail = np.where(good, tail, 0.0)
    err = np.where(good, err, np.where(c3 == 0, 0.0, np.abs(c3) / h))
    return tail, err


def _tails(ts, contrib, singular):
    # tail extrapolation for each column of contrib; returns (tail, error) arrays
    cols = contrib.shape[1]
    tail = np.zeros(cols)
    terr = np.zeros(cols)
    lo, hi = ts <= 0, ts >= 0
    if singular in ("a", "both"):
        v, e = _ts_tail(-ts[lo][::-1], contrib[lo][::-1])
        tail += v
        terr += e
    if singular in ("b", "both"):
        v, e = _ts_tail(ts[hi], contrib[hi])
        tail += v
        terr += e
    return tail, terr


def integrate_log_singular(f, a: float, b: float, cfg: QuadConfig | None = None,
                           singular: str = "a", distance: bool = False) -> QuadResult:
    """Tanh-sinh quadrature for an integrand singular at a declared endpoint.

    ``singular`` is "a", "b" or "both". The integrand is evaluated at
    a + y (or b - y) with y computed directly, so an endpoint at zero
    keeps full relative precision down to the underflow threshold. The
    part of the integral beyond the last representable node is
    extrapolated from the decay of the last contributions.

    With ``distance=True`` and a single singular endpoint, f is called
    with the distance y from that endpoint instead of the abscissa, so
    a singular endpoint away from zero loses no precision either.

    f may return shape (n, m) for n nodes, in which case m integrals are
    done at once on a shared node set and ``value`` is an array.
    Values from coarser levels are reused, since the node sets nest.
    """
    cfg = cfg or DEFAULT_QUAD
    if singular not in ("a", "b", "both"):
        raise ValueError("singular must be 'a', 'b' or 'both'")
    if a == b:
        return QuadResult(0.0, 0.0, 0, True)
    if a > b:
        r = integrate_log_singular(f, b, a, cfg, {"a": "b", "b": "a"}.get(singular, singular),
                                   distance)
        return QuadResult(-r.value, r.error_estimate, r.evaluations, r.converged)
    if math.isinf(a) or math.isinf(b):
        raise ValueError("integrate_log_singular needs a finite interval")
    if distance and singular == "both":
        raise ValueError("distance=True needs a single singular endpoint")
    length = b - a
    max_level = max(3, min(10, int(math.log2(cfg.max_subdivisions)) + 2))
    prev = None
    err = math.inf
    evals = 0
    known_t = np.empty(0)
    known_y = None
    scalar = True
    for level in range(0, max_level + 1):
        t, left, right, w = tanh_sinh_rule(level)
        if singular == "a":
            x = a + length * left
            inside = (x > a) & (x < b)
        elif singular == "b":
            x = b - length * right
            inside = (x > a) & (x < b)
        else:
            x = np.where(t <= 0, a + length * left, b - length * right)
            inside = (x > a) & (x < b)
        if distance:
            x = length * (left if singular == "a" else right)
            inside = np.ones_like(inside)
        xs, ws, ts = x[inside], w[inside], t[inside]
        old = np.isin(ts, known_t)
        fresh = _evaluate_block(f, xs[~old])
        evals += int(np.count_nonzero(~old))
        if known_y is None:
            scalar = fresh.ndim == 1
            known_y = fresh.reshape(len(fresh), -1)
            known_t = ts[~old]
            y = known_y
        else:
            fresh = fresh.reshape(len(fresh), -1)
            y = np.empty((len(ts), known_y.shape[1]))
            y[~old] = fresh
            y[old] = known_y[np.searchsorted(known_t, ts[old])]
            known_t, known_y = ts, y
        order = np.argsort(known_t)
        known_t, known_y = known_t[order], known_y[order]
        contrib = length * ws[:, None] * y
        value = np.sum(contrib, axis=0)
        tail, tail_err = _tails(ts, contrib, singular)
        value = value + tail
        if prev is not None:
            errs = np.abs(value - prev) + tail_err
            err = float(np.max(errs))
            ok = all(e <= cfg.target(float(v)) for e, v in zip(errs, value))
            if level >= 3 and ok:
                return QuadResult(float(value[0]) if scalar else value, err, evals, True)
        prev = value
    return QuadResult(float(value[0]) if scalar else value, err, evals, False)


def _evaluate_block(f, x):
    # like _evaluate but allows one trailing dimension of results per node
    if len(x) == 0:
        return np.empty(0)
    y = np.asarray(f(x), dtype=float)
    if y.ndim == 0 or y.shape[0] != x.shape[0]:
        return _evaluate(f, x)
    if not np.all(np.isfinite(y)):
        bad = x[~np.all(np.isfinite(y.reshape(len(x), -1)), axis=1)][0]
        raise NonFinite(f"integrand is not finite at x={bad!r}")
    return y


# --------------------------------------------------------------------------
# Counter-based random numbers

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_TWO53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def _mulhilo(a, b):
    s32 = np.uint64(32)
    a_lo = a & _MASK32
    a_hi = a >> s32
    b_lo = b & _MASK32
    b_hi = b >> s32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> s32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> s32) + (hl >> s32) + (mid >> s32)
    return hi, a * b


@numba.njit(cache=True)
def philox_block(k0, k1, c0, c1, c2, c3):
    """Philox4x64-10 applied to counter (c0..c3) under key (k0, k1)."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@numba.njit(cache=True)
def philox_word(k0, k1, index):
    """64-bit word number ``index`` (0-based) of the stream keyed by (k0, k1)."""
    block = index >> np.uint64(2)
    out = philox_block(k0, k1, block, np.uint64(0), np.uint64(0), np.uint64(0))
    lane = index & np.uint64(3)
    if lane == 0:
        return out[0]
    if lane == 1:
        return out[1]
    if lane == 2:
        return out[2]
    return out[3]


@numba.njit(cache=True)
def uniform_at(k0, k1, index):
    """Uniform double in [0, 1) from word ``index``."""
    return float(philox_word(k0, k1, index) >> np.uint64(11)) * _TWO53


@numba.njit(cache=True)
def gaussian_at(k0, k1, index):
    """Standard normal from words ``index`` and ``index + 1`` (Box-Muller)."""
    u1 = 1.0 - uniform_at(k0, k1, index)
    u2 = uniform_at(k0, k1, index + np.uint64(1))
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@numba.njit(cache=True)
def block_draws(k0, k1, block):
    """Two standard normals and two uniforms from the four words of one counter block.

    The normals are the cosine and sine halves of one Box-Muller pair.
    Block b covers words 4b .. 4b+3 of the stream.
    """
    c = philox_block(k0, k1, block, np.uint64(0), np.uint64(0), np.uint64(0))
    u0 = float(c[0] >> np.uint64(11)) * _TWO53
    u1 = float(c[1] >> np.uint64(11)) * _TWO53
    rad = math.sqrt(-2.0 * math.log(1.0 - u0))
    ang = 2.0 * math.pi * u1
    return (rad * math.cos(ang), rad * math.sin(ang),
            float(c[2] >> np.uint64(11)) * _TWO53, float(c[3] >> np.uint64(11)) * _TWO53)


@numba.njit(cache=True)
def _fill_uniform(k0, k1, start, out):
    for i in range(out.shape[0]):
        out[i] = uniform_at(k0, k1, start + np.uint64(i))


@numba.njit(cache=True)
def _fill_gaussian(k0, k1, start, out):
    for i in range(out.shape[0]):
        out[i] = gaussian_at(k0, k1, start + np.uint64(2 * i))


def _u64(v: int) -> np.uint64:
    return np.uint64(int(v) & 0xFFFFFFFFFFFFFFFF)


def splitmix64(v: int) -> int:
    z = (int(v) + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """Immutable position in a Philox stream.

    ``counter`` counts 64-bit words already consumed. Drawing returns the
    value together with the advanced stream; the original is unchanged.
    """
    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.counter < 2 ** 128:
            raise ValueError("counter must fit in 128 bits")

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return _u64(self.seed), _u64(self.stream_id)

    def substream(self, i: int) -> "RngStream":
        """Independent child stream number i (used as 'path i')."""
        return RngStream(self.seed, substream_id(self.stream_id, i), 0)

    def advance(self, n: int) -> "RngStream":
        return replace(self, counter=self.counter + int(n))


def substream_id(stream_id: int, i: int) -> int:
    return splitmix64(splitmix64(stream_id) ^ splitmix64(int(i) + 1))


def substream_ids(stream_id: int, n: int) -> np.ndarray:
    """Stream ids of children 0..n-1, as uint64."""
    return np.array([substream_id(stream_id, i) for i in range(n)], dtype=np.uint64)


def _check_counter(s: RngStream, n: int):
    if s.counter + n >= 2 ** 64:
        # words are addressed by a 64-bit index inside the jitted kernels
        raise OverflowError("stream exhausted")


def rng_uniform(s: RngStream) -> tuple[float, RngStream]:
    """One uniform in [0, 1) and the advanced stream."""
    _check_counter(s, 1)
    k0, k1 = s.key
    return float(uniform_at(k0, k1, np.uint64(s.counter))), s.advance(1)


def rng_gaussian(s: RngStream) -> tuple[float, RngStream]:
    """One standard normal (consumes two words) and the advanced stream."""
    _check_counter(s, 2)
    k0, k1 = s.key
    return float(gaussian_at(k0, k1, np.uint64(s.counter))), s.advance(2)


def rng_uniforms(s: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    _check_counter(s, n)
    out = np.empty(int(n))
    k0, k1 = s.key
    _fill_uniform(k0, k1, np.uint64(s.counter), out)
    return out, s.advance(n)


def rng_gaussians(s: RngStream, n: int) -> tuple[np.ndarray, RngStream]:
    _check_counter(s, 2 * n)
    out = np.empty(int(n))
    k0, k1 = s.key
    _fill_gaussian(k0, k1, np.uint64(s.counter), out)
    return out, s.advance(2 * n)


def pairwise_sum(x) -> float:
    """Deterministic pairwise summation, independent of how x was produced."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        return 0.0
    while x.size > 1:
        if x.size % 2:
            x = np.append(x, 0.0)
        x = x[0::2] + x[1::2]
    return float(x[0])


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with its standard error, path count and seed."""
    mean: float
    stderr: float
    n: int
    seed: int

    @classmethod
    def from_samples(cls, x, seed: int) -> "MCEstimate":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        m = pairwise_sum(x) / n
        var = pairwise_sum((x - m) ** 2) / (n - 1) if n > 1 else math.inf
        return cls(m, math.sqrt(var / n), n, seed)

    def z_score(self, other: "MCEstimate") -> float:
        """Difference in units of the combined standard error."""
        s = math.hypot(self.stderr, other.stderr)
        d = self.mean - other.mean
        return 0.0 if d == 0 else d / s if s > 0 else math.copysign(math.inf, d)
