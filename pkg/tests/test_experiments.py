import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisoperc import cli
from anisoperc import experiments as ex
from anisoperc.config import LatticeConfig


def small_scan(seed=0, reps=30):
    return ex.ExperimentPlan("kappa_scan", {"N": [4, 8], "b": [0.3, 0.4, 0.5], "kappa": [0.0, 0.5, 1.0, 2.0]},
                             reps=reps, seed=seed)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("bad", [
    dict(kind="nope"),
    dict(kind="kappa_scan", grid={"N": [0]}),
    dict(kind="kappa_scan", grid={"N": [2.5]}),
    dict(kind="kappa_scan", grid={"kappa": [-1.0]}),
    dict(kind="kappa_scan", grid={"b": [0.0]}),
    dict(kind="renorm_suite", grid={"delta": [0.4]}),
    dict(kind="cluster_scaling", reps=-1),
    dict(kind="cluster_scaling", scale=0.0),
])
def test_plan_validation(bad):
    with pytest.raises(ValueError):
        ex.ExperimentPlan(**bad)


def test_plan_accepts_integer_layer_delta():
    ex.ExperimentPlan("renorm_suite", grid={"delta": [2 ** -0.4, 1.0]})


@given(st.sampled_from(ex.KINDS), st.integers(0, 2**31), st.floats(0.01, 4.0), st.integers(0, 100))
def test_plan_round_trip(kind, seed, scale, reps):
    p = ex.default_plan(kind, seed=seed, scale=scale, cap=7)
    p.reps = reps
    q = ex.ExperimentPlan.from_dict(json.loads(p.to_json()))
    assert q == p
    assert q.n_reps(1000) == max(2, int(round((reps or 1000) * scale)))


def test_plan_rng_depends_on_kind_and_labels():
    a = ex.ExperimentPlan("kappa_scan", seed=1).rng(0).random()
    b = ex.ExperimentPlan("exponent_fit", seed=1).rng(0).random()
    c = ex.ExperimentPlan("kappa_scan", seed=1).rng(1).random()
    assert len({a, b, c}) == 3
    assert ex.ExperimentPlan("kappa_scan", seed=1).rng(0).random() == a


def test_grid_cells_order():
    p = ex.ExperimentPlan("kappa_scan", {"N": [1, 2], "kappa": [0.5], "b": [0.3, 0.4]})
    assert ex.grid_cells(p) == [{"N": 1, "kappa": 0.5, "b": 0.3}, {"N": 1, "kappa": 0.5, "b": 0.4},
                                {"N": 2, "kappa": 0.5, "b": 0.3}, {"N": 2, "kappa": 0.5, "b": 0.4}]


def test_empty_report(tmp_path):
    m = ex.emit_report([], tmp_path)
    assert m["passed"] and m["plans"] == [] and m["files"] == {}
    assert json.loads((tmp_path / "manifest.json").read_text())["passed"] is True


def test_binomial_chisquare_pools_small_cells():
    rng = np.random.default_rng(0)
    s = rng.binomial(40, 0.05, 20_000)
    stat, p, dof = ex.binomial_chisquare(s, 40, 0.05)
    assert p > 0.001 and 2 <= dof < 40
    assert ex.binomial_chisquare(s + 1, 40, 0.05)[1] < 1e-6


def test_median_band_covers_median():
    med, lo, hi = ex.median_band(np.arange(1001.0))
    assert med == 500 and lo < 500 < hi


def test_box_for():
    assert ex.box_for(32) == (3 * 64, 8)
    assert ex.box_for(1) == (3, 2)


def test_kappa_scan_small(tmp_path):
    res = ex.run_kappa_scan(small_scan())
    assert res.gate("scan_complete").passed
    assert res.gate("monotone_in_kappa").passed
    assert res.gate("kappa_zero").passed
    rows = {(r[0], r[1], r[2]): r for r in res.tables[0].rows}
    assert all(float(rows[(N, b, 0.0)][4]) == 0.0 for N in (4, 8) for b in (0.3, 0.4, 0.5))
    assert len(res.tables[1].rows) == 6


def test_scan_rerun_identical_and_seed_changes_data(tmp_path):
    a = ex.emit_report([ex.run_kappa_scan(small_scan(seed=3))], tmp_path / "a")
    b = ex.emit_report([ex.run_kappa_scan(small_scan(seed=3))], tmp_path / "b")
    c = ex.emit_report([ex.run_kappa_scan(small_scan(seed=4))], tmp_path / "c")
    assert a["files"] == b["files"]
    name = "kappa_scan__crossing.csv"
    assert a["files"][name] != c["files"][name]
    ra, rc = read_csv(tmp_path / "a" / name), read_csv(tmp_path / "c" / name)
    assert ra[0] == rc[0] and len(ra) == len(rc)
    assert (tmp_path / "a" / "kappa_scan__half_crossing.svg").exists()
    assert (tmp_path / "a" / "kappa_scan__half_crossing.png").exists()


def test_trend_gates_logic():
    g = ex.trend_gates({(0.4, 32): 1.0, (0.4, 128): 1.5, (0.5, 32): 1.0, (0.5, 128): 2.0,
                        (0.3, 32): 2.0, (0.3, 128): 1.0})
    assert all(ok for ok, _ in g.values()) and len(g) == 3
    g = ex.trend_gates({(0.4, 32): 1.0, (0.4, 128): 2.5})
    assert not g["trend_b0.4_stable"][0]
    assert ex.trend_gates({(0.4, 32): 1.0}) == {}


def test_exponent_fit_needs_two_sizes():
    th = ex.scan_thresholds(ex.ExperimentPlan("exponent_fit", {"N": [4]}, reps=10))
    res = ex.run_exponent_fit(ex.ExperimentPlan("exponent_fit", {"N": [4]}, reps=10), th)
    assert not res.passed


def test_exponent_fit_on_synthetic_thresholds():
    rng = np.random.default_rng(0)
    th = {N: {"N": N, "thresholds": rng.uniform(0, 2, 4000) * N**-0.4, "error": ""} for N in (16, 64, 256)}
    res = ex.run_exponent_fit(ex.ExperimentPlan("exponent_fit", params={"boot": 50}), th)
    assert abs(res.values["b_hat"] - 0.4) < 0.05


def test_dominating_branching_kappa_zero():
    db = ex.run_dominating_branching(LatticeConfig(N=20), 1.0, 200, np.random.default_rng(0), [1, 2, 3])
    assert db.extinct_fraction == 1.0 and db.mean_offspring == 0.0 and db.capped == 0
    with pytest.raises(ValueError):
        ex.run_dominating_branching(LatticeConfig(N=20), 1.0, 10, np.random.default_rng(0), [])


def test_dominating_branching_subcritical_and_wald():
    sizes = np.random.default_rng(1).geometric(0.2, 5000)
    L = sizes.mean() / 20**0.4
    kappa = 0.5 / (2 * L)
    db = ex.run_dominating_branching(LatticeConfig(N=20, kappa=kappa), L, 4000,
                                     np.random.default_rng(2), sizes)
    assert db.subcritical and math.isclose(db.two_kappa_L, 0.5)
    assert db.extinct_fraction >= 0.99
    assert abs(db.mean_offspring - db.predicted_offspring) <= 3 * db.offspring_se


def test_cli_scan_with_plan(tmp_path):
    plan = small_scan(reps=20).to_dict()
    (tmp_path / "p.json").write_text(json.dumps(plan))
    code = cli.main(["scan", "--plan", str(tmp_path / "p.json"), "--out", str(tmp_path / "o"), "--no-figures"])
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert code == (0 if m["passed"] else 1)
    assert "kappa_scan__crossing.csv" in m["files"]
    assert not list((tmp_path / "o").glob("*.svg"))


def test_cli_seed_env_and_replay(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.SEED_ENV, "17")
    code = cli.main(["cluster", "--out", str(tmp_path / "a"), "--scale", "0.005"])
    out = capsys.readouterr().out
    assert "cluster_scaling.cluster_scaling" in out
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["plans"][0]["seed"] == 17
    assert code == (0 if m["passed"] else 1)
    monkeypatch.delenv(cli.SEED_ENV)
    cli.main(["report", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")])
    m2 = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert m2["files"] == m["files"]


def test_cli_config_params(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 8, "cluster_scaling": {"cap": 50}}))
    cli.main(["cluster", "--config", str(cfg), "--out", str(tmp_path / "o"), "--scale", "0.005",
              "--no-figures", "--explore"])
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["plans"][0]["params"] == {"cap": 50}
    assert (tmp_path / "o" / "cluster_sites.csv").exists()


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["bogus"])
