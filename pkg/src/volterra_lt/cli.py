"""Command-line front end: eval, verify, simulate, report.

Outputs are CSV (one header line, 17 significant digits) with a JSON
sidecar holding parameters and check rows. Exit codes: 0 success,
1 a check failed, 2 usage error.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

DEFAULTS = {
    "T": 1.0,
    "lambda": 1.0,
    "lambda-prime": None,
    "x0": 0.5,
    "eps": "0.05",
    "n": 10_000,
    "seed": 0,
    "dt-max": 1e-4,
    "tol": (),
    "out": None,
    "workers": 1,
}
_FLOAT_KEYS = {"T", "lambda", "lambda-prime", "x0", "dt-max"}
_INT_KEYS = {"n", "seed", "workers"}


class UsageProblem(click.UsageError):
    pass


@dataclass
class RunReport:
    command: str
    params: dict
    results: dict = field(default_factory=dict)  # column name -> list of values
    checks: list = field(default_factory=list)
    seed: int = 0
    wall_time: float = 0.0

    def add_check(self, name, value, threshold):
        value = float(value)
        self.checks.append({"name": name, "value": value, "threshold": float(threshold),
                            "pass": bool(abs(value) <= threshold)})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)


# --------------------------------------------------------------------------
# formatting

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def table_csv(columns: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(names)
    n = len(columns[names[0]]) if names else 0
    for i in range(n):
        w.writerow([fmt(columns[k][i]) for k in names])
    return buf.getvalue()


def write_report(rep: RunReport, out: str | None, extra_tables: dict | None = None):
    text = table_csv(rep.results) if rep.results else ""
    # wall time goes to stderr only, so identical runs give identical files
    side = {"command": rep.command, "params": rep.params, "seed": rep.seed, "checks": rep.checks}
    if out is None:
        click.echo(text, nl=False)
    else:
        p = Path(out)
        p.write_text(text)
        for suffix, cols in (extra_tables or {}).items():
            p.with_name(p.name + suffix).write_text(table_csv(cols))
        p.with_name(p.name + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    click.echo(f"{rep.command}: {len(rep.checks)} checks, wall time {rep.wall_time:.2f}s", err=True)


# --------------------------------------------------------------------------
# options and config

def read_config(path: str) -> dict:
    """Parse a `key = value` file; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageProblem(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.lstrip("-").replace("_", "-")
        if k not in DEFAULTS:
            raise UsageProblem(f"{path}:{lineno}: unknown key {k!r}")
        out[k] = v
    return out


def resolve(flags: dict, config: str | None) -> dict:
    """flags > config file > VOLTERRA_SEED (seed only) > defaults."""
    cfg = read_config(config) if config else {}
    out = {}
    for k, d in DEFAULTS.items():
        v = flags.get(k)
        if v is None or v == ():
            v = cfg.get(k)
            if k == "tol" and v is not None:
                v = tuple(s.strip() for s in v.split(",") if s.strip())
        if v is None and k == "seed":
            v = os.environ.get("VOLTERRA_SEED")
        if v is None:
            v = d
        try:
            if v is not None and k in _FLOAT_KEYS:
                v = float(v)
            elif v is not None and k in _INT_KEYS:
                v = int(v)
        except ValueError:
            raise UsageProblem(f"bad value for --{k}: {v!r}")
        out[k] = v
    if out["n"] < 0 or out["workers"] < 1:
        raise UsageProblem("--n must be >= 0 and --workers >= 1")
    return out


def common_options(f):
    opts = [
        click.option("--T", "T", type=float, default=None, help="Time horizon."),
        click.option("--lambda", "lam", type=float, default=None, help="Point-potential strength."),
        click.option("--lambda-prime", "lam_prime", type=float, default=None, help="Second strength for reweighting."),
        click.option("--x0", type=float, default=None, help="Starting radius."),
        click.option("--eps", type=str, default=None, help="Crossing level(s), comma separated."),
        click.option("--n", "n", type=int, default=None, help="Number of paths."),
        click.option("--seed", type=int, default=None, help="Seed (fallback: VOLTERRA_SEED)."),
        click.option("--dt-max", "dt_max", type=float, default=None, help="Largest diffusion time step."),
        click.option("--tol", multiple=True, help="Tolerance override: a number for all checks or name=value."),
        click.option("--out", type=str, default=None, help="Output CSV (stdout if omitted)."),
        click.option("--workers", type=int, default=None, help="Parallel workers."),
        click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="key = value file; flags take precedence."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _gather(kw) -> tuple[dict, str | None]:
    flags = {"T": kw.pop("T"), "lambda": kw.pop("lam"), "lambda-prime": kw.pop("lam_prime"),
             "x0": kw.pop("x0"), "eps": kw.pop("eps"), "n": kw.pop("n"), "seed": kw.pop("seed"),
             "dt-max": kw.pop("dt_max"), "tol": kw.pop("tol"), "out": kw.pop("out"),
             "workers": kw.pop("workers")}
    return flags, kw.pop("config")


def _params(o):
    from .kernels import ModelParams
    try:
        return ModelParams(o["T"], o["lambda"])
    except ValueError as e:
        raise UsageProblem(str(e))


def parse_eps(text: str) -> tuple:
    try:
        vals = tuple(float(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise UsageProblem(f"bad --eps {text!r}")
    if not vals or any(v < 0 for v in vals):
        raise UsageProblem(f"bad --eps {text!r}")
    return vals


# --------------------------------------------------------------------------
# eval

def parse_grid(text: str) -> np.ndarray:
    """'a,b,c' | 'start:stop:num' (linear) | 'log:start:stop:num' (geometric)."""
    try:
        if text.startswith("log:"):
            a, b, n = text[4:].split(":")
            a, b, n = float(a), float(b), int(n)
            if a <= 0 or b <= 0 or n < 1:
                raise ValueError
            return np.geomspace(a, b, n)
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return np.linspace(float(a), float(b), n)
        vals = [float(s) for s in text.split(",")]
        if not vals:
            raise ValueError
        return np.array(vals)
    except ValueError:
        raise UsageProblem(f"malformed grid {text!r}")


def _point(r, phi=0.0):
    return np.array([r * math.cos(phi), r * math.sin(phi)])


def _eval_table():
    from . import distributions as dist
    from . import jump_process as jp
    from . import kernels as K
    from . import volterra as V

    return {
        "nu": (("x",), lambda P, x: V.nu(x)),
        "nu_prime": (("x",), lambda P, x: V.nu_prime(x)),
        "E": (("x",), lambda P, x: V.exp_int_E(x)),
        "H": (("x",), lambda P, x: K.big_H(P.T, P.lam, x)),
        "h": (("t", "x", "y", "phi"), lambda P, t, x, y, phi: K.little_h(t, P.lam, _point(x), _point(y, phi))),
        "f": (("t", "x", "y", "phi"), lambda P, t, x, y, phi: K.full_f(t, P.lam, _point(x), _point(y, phi))),
        "d": (("s", "t", "x", "y", "phi"),
              lambda P, s, t, x, y, phi: K.trans_density_d(P, s, t, _point(x), _point(y, phi))),
        "b": (("t", "x"), lambda P, t, x: K.drift_bbar(t, P.lam, x)),
        "vp_density": (("v",), lambda P, v: dist.vp_density(P.T * P.lam, v)),
        "tau_density": (("x", "t"), lambda P, x, t: dist.tau_density(P, x, t)),
        "joint_density": (("x", "t", "v"), lambda P, x, t, v: dist.tau_localtime_joint_density(P, x, t, v)),
        "renewal_density": (("a", "b"), lambda P, a, b: jp.renewal_density(P, a, b)),
        "jump_rate": (("a", "b"), lambda P, a, b: jp.jump_rate_density(P, a, b)),
        "transition_kernel": (("s", "a", "b"), lambda P, s, a, b: jp.transition_kernel(P, s, a, b)),
    }


EVAL_FUNCTIONS = ("nu", "nu_prime", "E", "H", "h", "f", "d", "b", "vp_density", "tau_density",
                  "joint_density", "renewal_density", "jump_rate", "transition_kernel")
_OPTIONAL_ARGS = {"phi": "0"}


def cmd_eval(name: str, grids: dict, o: dict) -> RunReport:
    table = _eval_table()
    if name not in table:
        raise UsageProblem(f"unknown function {name!r}; choose from {', '.join(EVAL_FUNCTIONS)}")
    args, fn = table[name]
    missing = [a for a in args if grids.get(a) is None and a not in _OPTIONAL_ARGS]
    if missing:
        raise UsageProblem(f"{name} needs --{' --'.join(missing)}")
    axes = [parse_grid(grids[a] if grids.get(a) is not None else _OPTIONAL_ARGS[a]) for a in args]
    P = _params(o)
    cols = {a: [] for a in args}
    cols[name] = []
    for combo in itertools.product(*axes):
        try:
            val = float(fn(P, *combo))
        except ValueError as e:
            raise UsageProblem(f"{name}{combo}: {e}")
        for a, v in zip(args, combo):
            cols[a].append(float(v))
        cols[name].append(val)
    return RunReport("eval " + name, {"T": P.T, "lambda": P.lam}, cols, seed=o["seed"])


# --------------------------------------------------------------------------
# verify

SUITES = ("identities", "kernels", "distributions", "jump", "all")


def _max_abs(vals):
    return max(abs(float(v)) for v in vals)


def _identity_checks(rep, tol):
    from .volterra import (double_nu_prime_residual, ebold_convolution_residual, laplace_check_nu,
                           beta_pair_residual, log_convolution_residual, nu_series, ramanujan_N_quad)
    xs = np.geomspace(1e-3, 20.0, 40)
    # series route for nu against the integral route for N
    rep.add_check("ramanujan", _max_abs([(nu_series(x) + ramanujan_N_quad(x) - math.exp(x)) / math.exp(x)
                                         for x in xs]), tol("ramanujan", 1e-9))
    rep.add_check("laplace", _max_abs([laplace_check_nu(s) for s in (1.1, 2.0, 10.0)]), tol("laplace", 1e-5))
    grid = (0.1, 0.3, 0.5, 0.7, 0.9)
    lams = (0.2, 0.5, 1.0, 2.0, 5.0)
    rep.add_check("double-nu-prime", _max_abs([double_nu_prime_residual(t, 1.0, lam) for t in grid for lam in lams]),
                  tol("double-nu-prime", 1e-6))
    betas = (0.1, 0.5, 1.0, 3.0, 10.0)
    rep.add_check("lemma-C", _max_abs([beta_pair_residual(b, bp) for b in betas for bp in betas]),
                  tol("lemma-C", 1e-6))
    rep.add_check("log-convolution", _max_abs([log_convolution_residual(x, lam) for x in (0.5, 1.0, 2.0)
                                               for lam in (0.5, 1.0, 3.0)]), tol("log-convolution", 1e-6))
    rep.add_check("E-bold-convolution", _max_abs([ebold_convolution_residual(x, lam, z) for x in (0.5, 1.0)
                                                  for lam in (0.5, 2.0) for z in (0.3, 1.0, 2.0)]),
                  tol("E-bold-convolution", 1e-6))


def _admissible_tuples(seed, k):
    # r < s < t in [0, T] with T = 1, radii a and c in [0.1, 1]
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < k:
        r, s, t = np.sort(rng.uniform(0.0, 1.0, 3))
        if s - r > 0.05 and t - s > 0.05:
            out.append((float(r), float(s), float(t), float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.1, 1.0))))
    return out


def _kernel_checks(rep, tol, o):
    from .kernels import (ModelParams, chapman_kolmogorov_residual, d_normalization_residual,
                          eigen_bound_residual, f_semigroup_residual)
    P = ModelParams(1.0, 1.0)
    tuples = _admissible_tuples(o["seed"], 5)
    rep.add_check("d-normalization", _max_abs([d_normalization_residual(P, s, t, a) for _, s, t, a, _ in tuples]),
                  tol("d-normalization", 1e-5))
    rep.add_check("chapman-kolmogorov",
                  _max_abs([chapman_kolmogorov_residual(P, r, s, t, a, c) for r, s, t, a, c in tuples]),
                  tol("chapman-kolmogorov", 1e-5))
    rep.add_check("semigroup-f", _max_abs([f_semigroup_residual(0.3, 0.4, 1.0, a, c) for a, c in ((0.3, 0.6), (0.8, 0.2))]),
                  tol("semigroup-f", 1e-5))
    rep.add_check("eigen-bound-state", _max_abs([eigen_bound_residual(0.5, 1.0, a)
                                                 for a in np.geomspace(0.02, 3.0, 20)]),
                  tol("eigen-bound-state", 1e-4))


def _distribution_checks(rep, tol):
    from .distributions import (localtime_mgf, localtime_mgf_from_joint, tau_density,
                                tau_localtime_joint_density, tau_survival_residual, vp_cdf)
    from .kernels import ModelParams
    from .numerics import QuadConfig, integrate
    from .volterra import nu
    q = QuadConfig(abs_tol=1e-12, rel_tol=1e-10)
    P = ModelParams(1.0, 1.0)
    rep.add_check("vp-normalization", _max_abs([vp_cdf(th, 80.0 + 4 * th) - 1.0 for th in (0.1, 1.0, 5.0)]),
                  tol("vp-normalization", 1e-8))
    rep.add_check("tau-normalization", _max_abs([integrate(lambda t: tau_density(P, x, t), 0.0, P.T, q).value - 1.0
                                                 for x in (0.2, 0.5, 1.0)]), tol("tau-normalization", 1e-6))
    rep.add_check("tau-survival", _max_abs([tau_survival_residual(P, 0.5, s) for s in (0.2, 0.6)]),
                  tol("tau-survival", 1e-5))

    def marginal_gap(x, t):
        v = integrate(lambda v: tau_localtime_joint_density(P, x, t, v), 0.0, math.inf, q).value
        return v - tau_density(P, x, t)

    rep.add_check("joint-marginal", _max_abs([marginal_gap(0.5, t) for t in (0.1, 0.5, 0.9)]),
                  tol("joint-marginal", 1e-6))
    rep.add_check("localtime-mgf", _max_abs([localtime_mgf_from_joint(P, x, 0.5) - localtime_mgf(P, x, 0.5)
                                             for x in (0.3, 1.0)]), tol("localtime-mgf", 1e-5))
    rep.add_check("localtime-mgf-origin", localtime_mgf(P, 0.0, 0.5) - nu(math.exp(0.5)) / nu(1.0),
                  tol("localtime-mgf-origin", 1e-12))


def _jump_checks(rep, tol):
    from .jump_process import escape_total_mass, transition_ck_residual, transition_mass_residual
    from .kernels import ModelParams
    P = ModelParams(1.0, 1.0)
    rep.add_check("T-mass", _max_abs([transition_mass_residual(P, s, a) for s in (0.05, 0.3, 1.0)
                                      for a in (0.0, 0.4, 0.8)]), tol("T-mass", 1e-5))
    ck = [transition_ck_residual(P, s, t, a, np.linspace(a + 0.05, 0.95, 6)) for s, t, a in
          ((0.2, 0.3, 0.0), (0.5, 0.1, 0.3), (0.05, 0.6, 0.5))]
    rep.add_check("T-chapman", max(max(abs(d), abs(m)) for d, m in ck), tol("T-chapman", 1e-5))
    rep.add_check("escape-total-mass", _max_abs([escape_total_mass(P, e) - 1.0 for e in (0.1, 0.5)]),
                  tol("escape-total-mass", 1e-6))


def parse_tol(items) -> tuple[float | None, dict]:
    default, named = None, {}
    for it in items:
        try:
            if "=" in it:
                k, v = it.split("=", 1)
                named[k.strip()] = float(v)
            else:
                default = float(it)
        except ValueError:
            raise UsageProblem(f"bad --tol {it!r}")
    return default, named


def cmd_verify(suite: str, o: dict) -> RunReport:
    if suite not in SUITES:
        raise UsageProblem(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    default, named = parse_tol(o["tol"])

    def tol(name, base):
        return named.get(name, default if default is not None else base)

    rep = RunReport("verify " + suite, {"suite": suite, "tol": list(o["tol"])}, seed=o["seed"])
    if suite in ("identities", "all"):
        _identity_checks(rep, tol)
    if suite in ("kernels", "all"):
        _kernel_checks(rep, tol, o)
    if suite in ("distributions", "all"):
        _distribution_checks(rep, tol)
    if suite in ("jump", "all"):
        _jump_checks(rep, tol)
    rep.results = {"check": [c["name"] for c in rep.checks], "value": [c["value"] for c in rep.checks],
                   "threshold": [c["threshold"] for c in rep.checks], "pass": [c["pass"] for c in rep.checks]}
    return rep


# --------------------------------------------------------------------------
# simulate

SUMMARY_COLUMNS = ("name", "mean", "stderr", "n", "closed_form")


def _summary(rows):
    cols = {k: [] for k in SUMMARY_COLUMNS}
    for name, est, closed in rows:
        cols["name"].append(name)
        cols["mean"].append(est.mean)
        cols["stderr"].append(est.stderr)
        cols["n"].append(est.n)
        cols["closed_form"].append(closed)
    return cols


def cmd_simulate(target: str, o: dict) -> tuple[RunReport, dict]:
    from .numerics import MCEstimate
    P = _params(o)
    n, seed = o["n"], o["seed"]
    params = {k: o[k] for k in ("T", "lambda", "lambda-prime", "x0", "eps", "n", "seed", "dt-max")}
    eps = parse_eps(o["eps"])
    if target == "jump":
        from .jump_process import escape_atom, mean_terminal_local_time, rn_reweight_check, simulate_ensemble
        e = eps[0]
        if not 0 <= e < P.T:
            raise UsageProblem("--eps must lie in [0, T) for the jump process")
        rows = []
        if n > 0:
            ens = simulate_ensemble(P, n, seed=seed, eps=e)
            rows.append(("terminal_local_time", MCEstimate.from_samples(ens.S, seed), mean_terminal_local_time(P)))
            if e > 0:
                rows.append(("escape_atom", MCEstimate.from_samples((ens.escape >= P.T).astype(float), seed),
                             escape_atom(P, e)))
            if o["lambda-prime"] is not None:
                w, direct = rn_reweight_check(P, o["lambda-prime"], lambda s: np.minimum(s, 1.0), n, seed)
                rows.append(("reweighted_min_S_1", w, math.nan))
                rows.append(("direct_min_S_1", direct, math.nan))
            paths = {"path": list(range(n)), "terminal_local_time": list(ens.S), "escape": list(ens.escape)}
        else:
            paths = {"path": [], "terminal_local_time": [], "escape": []}
        rep = RunReport("simulate jump", params, _summary(rows), seed=seed)
        return rep, {".paths.csv": paths}
    if target == "diffusion":
        from . import diffusion_mc as dm
        rows = []
        paths = {}
        x0 = o["x0"]
        if n > 0:
            if x0 > eps[0]:
                cfg = dm.SimConfig(dt_max=o["dt-max"], n_paths=n, x0=x0, eps_levels=eps)
                rows.append(("hitting_prob_mc", dm.hitting_prob_mc(P, eps[0], cfg, seed), math.nan))
                rows.append(("hitting_prob_is", dm.hitting_prob_is(P, eps[0], cfg, seed), math.nan))
            else:
                levels = tuple(sorted(set(eps), reverse=True))
                cfg = dm.SimConfig(dt_max=o["dt-max"], n_paths=n, x0=x0, eps_levels=levels)
                ens = dm.localtime_ensemble(P, cfg, seed, workers=o["workers"])
                paths = {"path": list(range(n))}
                for k, e in enumerate(levels):
                    for j, name in enumerate(dm.ESTIMATOR_NAMES):
                        rows.append((f"{name}@{fmt(e)}", ens.estimate(k, j), math.nan))
                        paths[f"{name}@{fmt(e)}"] = list(ens.values[:, k, j])
        rep = RunReport("simulate diffusion", params, _summary(rows), seed=seed)
        return rep, ({".paths.csv": paths} if paths else {})
    raise UsageProblem(f"unknown target {target!r}; choose jump or diffusion")


# --------------------------------------------------------------------------
# report

def cmd_report(inputs, o: dict) -> RunReport:
    if not inputs:
        raise UsageProblem("report needs at least one input CSV")
    merged: dict[str, list] = {}
    order = []
    for path in inputs:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != SUMMARY_COLUMNS:
            raise UsageProblem(f"{path}: columns {rows[0] if rows else []} do not match {list(SUMMARY_COLUMNS)}")
        for r in rows[1:]:
            try:
                name, mean, se, n, closed = r[0], float(r[1]), float(r[2]), int(r[3]), float(r[4])
            except (ValueError, IndexError):
                raise UsageProblem(f"{path}: malformed row {r}")
            if name not in merged:
                order.append(name)
                merged[name] = []
            merged[name].append((mean, se, n, closed))
    cols = {k: [] for k in SUMMARY_COLUMNS + ("z",)}
    for name in order:
        parts = merged[name]
        ntot = sum(p[2] for p in parts)
        mean = sum(p[0] * p[2] for p in parts) / ntot if ntot else math.nan
        se = math.sqrt(sum((p[1] * p[2]) ** 2 for p in parts)) / ntot if ntot else math.nan
        closed = parts[0][3]
        z = (mean - closed) / se if se > 0 and math.isfinite(closed) else math.nan
        for k, v in zip(cols, (name, mean, se, ntot, closed, z)):
            cols[k].append(v)
    return RunReport("report", {"inputs": [str(p) for p in inputs]}, cols, seed=o["seed"])


# --------------------------------------------------------------------------
# click wiring

def _run(fn):
    t0 = time.perf_counter()
    rep, extra = fn()
    rep.wall_time = time.perf_counter() - t0
    return rep, extra


@click.group()
def main():
    """Volterra-function kernels, local-time laws and their Monte Carlo checks."""


@main.command("eval")
@click.argument("function")
@click.option("--x", "gx", default=None)
@click.option("--y", "gy", default=None)
@click.option("--s", "gs", default=None)
@click.option("--t", "gt", default=None)
@click.option("--a", "ga", default=None)
@click.option("--b", "gb", default=None)
@click.option("--v", "gv", default=None)
@click.option("--phi", "gphi", default=None, help="Angle between the two points (h, f, d).")
@common_options
def eval_cmd(function, gx, gy, gs, gt, ga, gb, gv, gphi, **kw):
    """Evaluate FUNCTION on the Cartesian product of the argument grids."""
    flags, config = _gather(kw)
    o = resolve(flags, config)
    grids = {"x": gx, "y": gy, "s": gs, "t": gt, "a": ga, "b": gb, "v": gv, "phi": gphi}
    rep, _ = _run(lambda: (cmd_eval(function, grids, o), None))
    write_report(rep, o["out"])


@main.command("verify")
@click.argument("suite", default="all")
@common_options
def verify_cmd(suite, **kw):
    """Run the identity checks of SUITE; exit 1 if any fails."""
    flags, config = _gather(kw)
    o = resolve(flags, config)
    rep, _ = _run(lambda: (cmd_verify(suite, o), None))
    write_report(rep, o["out"])
    if not rep.passed:
        sys.exit(1)


@main.command("simulate")
@click.argument("target")
@common_options
def simulate_cmd(target, **kw):
    """Simulate TARGET (jump or diffusion) and write summary and per-path tables."""
    flags, config = _gather(kw)
    o = resolve(flags, config)
    rep, extra = _run(lambda: cmd_simulate(target, o))
    write_report(rep, o["out"], extra)


@main.command("report")
@click.argument("inputs", nargs=-1)
@common_options
def report_cmd(inputs, **kw):
    """Merge summary CSVs from several runs and add z-scores against closed forms."""
    flags, config = _gather(kw)
    o = resolve(flags, config)
    rep, _ = _run(lambda: (cmd_report(inputs, o), None))
    write_report(rep, o["out"])


if __name__ == "__main__":
    main()
