import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from miqmc.cli import main
from miqmc.config import ConfigError, ExperimentPlan, parse_config, parse_config_text
from miqmc.field import MaternParams
from miqmc.sweep import RUN_COLUMNS, fit_rate, read_runs, run_sweep

# ------------------------------------------------------------------ config


def test_minimal_config_gets_defaults():
    plan = parse_config_text("problem = G1\nfield = F1\neps = 0.1\n")
    assert plan.problem == "G1" and plan.field == "F1" and plan.eps == [0.1]
    assert plan.estimators == ["MIQMC-TD"] and plan.repetitions == 5 and plan.d == 3
    cfg = plan.config("MIQMC-TD", 0.1, 0)
    assert (cfg.warmup, cfg.qmc_warmup, cfg.shifts, cfg.m0, cfg.M) == (32, 4, 16, 4, 2)


def test_sections_and_overrides():
    plan = parse_config_text("""
# comment
[experiment]
problem = G2
field = F2
d = 2
estimators = MLMC, MIQMC-FT
eps = 0.01, 0.005
repetitions = 2
seed = 7

[grid]
m0 = 4, 8
M = 2

[estimator]
shifts = 8
eta_max = 0.8

[solver]
preconditioner = sgs
""")
    cfg = plan.config("MLMC", 0.01, 1)
    assert cfg.m0 == (4, 8) and cfg.shifts == 8 and cfg.eta_max == 0.8 and cfg.preconditioner == "sgs"
    assert cfg.qoi == "G2" and cfg.d == 2


def test_f3_preset_parameters():
    plan = parse_config_text("problem = G1\nfield = F3\neps = 0.1\n")
    assert plan.matern == MaternParams(0.075, 1.0, 0.5)


def test_custom_field_section():
    plan = parse_config_text("problem = G1\neps = 0.1\n[field]\ncorr_len = 0.5\nsmoothness = 1.5\n")
    assert plan.matern == MaternParams(0.5, 1.0, 1.5)


@pytest.mark.parametrize("text,match", [
    ("problem = G1\nfield = F1\neps = 0.1, 0.2\n", "strictly decreasing"),
    ("problem = G1\nfield = F1\neps = 0.1\nbogus = 1\n", r"line 4: unknown key 'bogus'"),
    ("problem = G1\nfield = F1\neps = 0.1\nd = two\n", r"line 4: invalid value for 'd'"),
    ("problem = G1\nfield = F1\n", "missing required key 'eps'"),
    ("field = F1\neps = 0.1\n", "missing required key 'problem'"),
    ("problem = G1\neps = 0.1\n", "missing required key 'field'"),
    ("problem = G1\nfield = F1\neps = 0.1\n[nope]\n", r"line 4: unknown section"),
    ("problem = G1\nfield = F1\neps = 0.1\njust text\n", "line 4: expected key = value"),
    ("problem = G1\nfield = F9\neps = 0.1\n", "unknown field"),
    ("problem = G3\nfield = F1\neps = 0.1\n", "line 1"),
    ("problem = G1\nfield = F1\neps = 0.1\nrepetitions = 0\n", "repetitions"),
    ("problem = G1\nfield = F1\neps = 0.1\nestimators = MIMC\n", "unknown estimator"),
    ("problem = G1\nfield = F1\neps = 0.1\n[estimator]\nshifts = 1\n", "shifts"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_parse_config_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("problem = G1\nfield = F1\neps = 0.1\n")
    assert parse_config(p).eps == [0.1]


def test_run_seeds_distinct():
    plan = ExperimentPlan("G1", "F1", [0.1, 0.05], repetitions=3)
    seeds = [e[-1] for e in plan.entries()]
    assert len(set(seeds)) == len(seeds)


# -------------------------------------------------------------------- rates

def test_fit_rate_exact():
    eps = np.array([0.1, 0.05, 0.02, 0.01])
    f = fit_rate(list(zip(eps, eps**-2)))
    assert f.q == pytest.approx(2.0) and f.r == pytest.approx(0.5)
    f = fit_rate(list(zip(eps, 3 * eps**-1)))
    assert f.q == pytest.approx(1.0) and f.r == pytest.approx(1.0)


def test_fit_rate_noisy():
    rng = np.random.default_rng(0)
    eps = np.geomspace(0.1, 1e-3, 8)
    cost = eps**-2 * (1 + 0.05 * rng.uniform(-1, 1, eps.size))
    assert abs(fit_rate(list(zip(eps, cost))).q - 2) <= 0.15


@given(st.floats(1e-3, 1e3))
def test_fit_rate_scale_invariant(c):
    eps = np.array([0.1, 0.03, 0.01, 0.004])
    cost = eps**-1.5 * np.array([1.0, 1.1, 0.9, 1.05])
    a, b = fit_rate(list(zip(eps, cost))), fit_rate(list(zip(eps, c * cost)))
    assert a.r == pytest.approx(b.r, rel=1e-9)


@pytest.mark.parametrize("pts", [[(0.1, 1.0), (0.05, 2.0)], [(0.1, 1.0), (0.1, 2.0), (0.1, 3.0)],
                                 [(0.1, 1.0), (0.05, 1.0), (0.01, 1.0)], [(0.1, -1.0), (0.05, 2.0), (0.01, 3.0)]])
def test_fit_rate_rejects_bad_input(pts):
    with pytest.raises(ValueError):
        fit_rate(pts)


# -------------------------------------------------------------------- sweep

def small_plan(**kw):
    base = dict(problem="G1", field="F1", eps=[2e-2], d=2, estimators=["MIMC-TD"], repetitions=1, seed=3)
    base.update(kw)
    return ExperimentPlan(**base)


def data_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_sweep_single_entry(tmp_path):
    assert run_sweep(small_plan(), tmp_path) == 0
    rows = data_rows(tmp_path / "runs.csv")
    assert rows[0] == RUN_COLUMNS and len(rows) == 2
    assert (tmp_path / "reports" / "MIMC-TD_e0_r0.csv").exists()
    assert (tmp_path / "summary.txt").read_text().startswith("schema=")


def test_sweep_grid_size_and_order(tmp_path):
    plan = small_plan(estimators=["MLQMC", "MIQMC-TD"], eps=[2e-2, 1e-2, 5e-3], repetitions=2)
    assert run_sweep(plan, tmp_path) == 0
    runs = read_runs(tmp_path / "runs.csv")
    assert len(runs) == 12
    assert [(r["estimator"], float(r["eps"]), int(r["rep"])) for r in runs] == [
        (k, e, rep) for k in plan.estimators for e in plan.eps for rep in range(2)]
    rates = data_rows(tmp_path / "rates.csv")
    assert {(r[0], r[1]) for r in rates[1:]} == {(k, m) for k in plan.estimators
                                                  for m in ("model_work", "wall_time")}


def test_sweep_flags_non_converged(tmp_path):
    plan = small_plan(run_options={"L_max": 1})
    assert run_sweep(plan, tmp_path) == 2
    assert read_runs(tmp_path / "runs.csv")[0]["converged"] == "0"


def test_sweep_reproducible(tmp_path):
    plan = small_plan(estimators=["MIQMC-TD", "MLMC"], eps=[2e-2, 1e-2])
    run_sweep(plan, tmp_path / "a")
    run_sweep(plan, tmp_path / "b", workers=2)

    def strip(path):
        rows = read_runs(path)
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    assert strip(tmp_path / "a" / "runs.csv") == strip(tmp_path / "b" / "runs.csv")


# ---------------------------------------------------------------------- CLI

def test_cli_run_and_rates(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("problem = G1\nfield = F1\nd = 2\nestimators = MLQMC\neps = 2e-2, 1e-2, 5e-3\n"
                   "repetitions = 1\n")
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    assert len(read_runs(out / "runs.csv")) == 3
    capsys.readouterr()
    assert main(["rates", str(out / "runs.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("estimator,measure,r,q")
    assert lines[1].startswith("MLQMC,model_work,")


def test_cli_run_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem = G1\nfield = F1\neps = 0.1\nwat = 3\n")
    assert main(["run", str(cfg)]) == 1
    assert "line 4" in capsys.readouterr().err


def test_cli_eigs(tmp_path):
    out = tmp_path / "eigs.csv"
    assert main(["eigs", "--field", "F1", "--d", "3", "--out", str(out)]) == 0
    rows = data_rows(out)
    assert rows[0][:3] == ["r", "theta", "ratio"] and len(rows[0]) == 6
    ratios = [float(r[2]) for r in rows[1:]]
    assert ratios[0] == 1.0 and ratios[-1] <= 1e-3 < ratios[-2]


def test_cli_telescope_check(capsys):
    assert main(["telescope-check", "--d", "2", "--L", "1", "--samples", "3"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")
