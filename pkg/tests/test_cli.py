import csv
import io
import json
import math

import pytest
from click.testing import CliRunner

from volterra_lt.cli import main, parse_grid, resolve, UsageProblem


def run(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_eval_nu_at_zero():
    r = run("eval", "nu", "--x", "0")
    assert r.exit_code == 0
    assert rows(r.stdout) == [["x", "nu"], ["0", "0"]]


def test_eval_grid_forms():
    r = run("eval", "nu", "--x", "0:1:5")
    assert len(rows(r.stdout)) == 6
    r = run("eval", "E", "--x", "log:0.01:1:3")
    vals = [float(v[0]) for v in rows(r.stdout)[1:]]
    assert vals == pytest.approx([0.01, 0.1, 1.0])


def test_eval_d_positive():
    r = run("eval", "d", "--s", "0", "--t", "0.5", "--x", "0.2", "--y", "0.1,0.4", "--phi", "0.3",
            "--T", "1", "--lambda", "1")
    assert r.exit_code == 0
    vals = [float(v[-1]) for v in rows(r.stdout)[1:]]
    assert len(vals) == 2 and all(math.isfinite(v) and v > 0 for v in vals)


def test_eval_17_digits():
    r = run("eval", "nu", "--x", "1")
    assert rows(r.stdout)[1][1] == format(float(rows(r.stdout)[1][1]), ".17g")


@pytest.mark.parametrize("grid", ["1:2", "a,b", "log:0:1:3", "1:2:x", ""])
def test_bad_grid_exit_2(grid):
    r = run("eval", "nu", "--x", grid)
    assert r.exit_code == 2
    assert "Error" in r.output


def test_unknown_function_exit_2():
    assert run("eval", "nope", "--x", "1").exit_code == 2


def test_parse_grid_direct():
    assert list(parse_grid("0.5")) == [0.5]
    with pytest.raises(UsageProblem):
        parse_grid("log:1:2:0")


def test_verify_identities_rows(tmp_path):
    out = tmp_path / "v.csv"
    r = run("verify", "identities", "--out", out)
    assert r.exit_code == 0
    names = [row[0] for row in rows(out.read_text())[1:]]
    for n in ("ramanujan", "laplace", "double-nu-prime", "lemma-C", "log-convolution", "E-bold-convolution"):
        assert n in names
    side = json.loads((tmp_path / "v.csv.json").read_text())
    assert side["command"] == "verify identities" and all(c["pass"] for c in side["checks"])
    assert all(c["pass"] == (abs(c["value"]) <= c["threshold"]) for c in side["checks"])


def test_verify_jump_rows():
    r = run("verify", "jump")
    assert r.exit_code == 0
    names = [row[0] for row in rows(r.stdout)[1:]]
    assert {"T-mass", "T-chapman", "escape-total-mass"} <= set(names)


def test_verify_failure_exit_1():
    r = run("verify", "identities", "--tol", "ramanujan=0")
    assert r.exit_code == 1


def test_verify_unknown_suite():
    assert run("verify", "everything").exit_code == 2


def test_simulate_jump_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run("simulate", "jump", "--T", "1", "--lambda", "1", "--n", "2000", "--seed", "7",
                   "--eps", "0.1", "--out", p).exit_code == 0
    for suffix in ("", ".paths.csv", ".json"):
        assert (tmp_path / ("a.csv" + suffix)).read_bytes() == (tmp_path / ("b.csv" + suffix)).read_bytes()
    names = [r[0] for r in rows(a.read_text())[1:]]
    assert names == ["terminal_local_time", "escape_atom"]


def test_simulate_zero_paths():
    r = run("simulate", "jump", "--n", "0")
    assert r.exit_code == 0
    assert rows(r.stdout) == [["name", "mean", "stderr", "n", "closed_form"]]


def test_simulate_diffusion_hitting_columns():
    r = run("simulate", "diffusion", "--x0", "0.5", "--eps", "0.05", "--n", "300", "--dt-max", "1e-3")
    assert r.exit_code == 0
    names = [x[0] for x in rows(r.stdout)[1:]]
    assert names == ["hitting_prob_mc", "hitting_prob_is"]


def test_simulate_diffusion_localtime():
    r = run("simulate", "diffusion", "--x0", "0.001", "--eps", "0.08,0.04", "--n", "50", "--dt-max", "1e-4")
    assert r.exit_code == 0
    names = [x[0] for x in rows(r.stdout)[1:]]
    assert len(names) == 8 and names[0].startswith("occupation@")


def test_simulate_unknown_target():
    assert run("simulate", "planar").exit_code == 2


def test_report_merge_shrinks_stderr(tmp_path):
    outs = []
    for seed in (1, 2):
        p = tmp_path / f"s{seed}.csv"
        run("simulate", "jump", "--n", "4000", "--seed", seed, "--out", p)
        outs.append(p)
    single = [float(r[2]) for r in rows(outs[0].read_text())[1:]]
    r = run("report", *outs)
    assert r.exit_code == 0
    merged = rows(r.stdout)
    assert merged[0][-1] == "z"
    se = float(merged[1][2])
    assert single[0] / se == pytest.approx(math.sqrt(2), rel=0.1)
    assert int(merged[1][3]) == 8000


def test_report_mismatch_and_empty(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("report", bad).exit_code == 2
    assert run("report").exit_code == 2


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# run settings\nT = 2\nseed = 5\nlambda = 3\n")
    monkeypatch.setenv("VOLTERRA_SEED", "9")
    o = resolve({"T": None, "lambda": 4.0}, str(cfg))
    assert o["T"] == 2.0 and o["lambda"] == 4.0 and o["seed"] == 5
    o = resolve({}, None)
    assert o["seed"] == 9
    monkeypatch.delenv("VOLTERRA_SEED")
    assert resolve({}, None)["seed"] == 0


def test_config_bad_key(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("colour = red\n")
    assert run("eval", "nu", "--x", "1", "--config", cfg).exit_code == 2


def test_seed_from_environment(tmp_path):
    a = run("simulate", "jump", "--n", "100", env={"VOLTERRA_SEED": "3"}).stdout
    b = run("simulate", "jump", "--n", "100", "--seed", "3").stdout
    c = run("simulate", "jump", "--n", "100", "--seed", "4").stdout
    assert a == b != c
