import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
import yaml

from skillroute import cli, lp
from skillroute import experiments as ex
from skillroute.engine import ARRIVAL, START

MINIMAL = {
    "name": "minimal",
    "scenario": {"synthetic": {"num_types": 2, "num_servers": 2, "rates": [0.2, 0.15],
                               "service_mean": [{"server": 0, "mean": 3.0}, {"server": 1, "mean": 4.0}],
                               "lines": [[0, 0], [0, 1], [1, 1]],
                               "theta": [{"line": [0, 0], "theta": 0.9}, {"line": [0, 1], "theta": 0.3},
                                         {"line": [1, 1], "theta": 0.7}],
                               "horizon": 2000.0}},
    "policies": [{"kind": "UCBQR", "episode_length": 60.0}, {"kind": "FCFS_ALIS"}],
    "replications": 3,
    "seed": 11,
    "bin_width": 200.0,
}


def write_cfg(tmp_path, doc, name="exp.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def test_minimal_config_reports(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    reps = sorted(p.name for p in (out / "replications").glob("*.csv"))
    assert len(reps) == 6
    assert reps[0] == "FCFS_ALIS__seed=11.csv"
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].split(",") == list(ex.SUMMARY_COLUMNS)
    assert len(summary) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["exit_code"] == 0
    assert len(manifest["cells"]["UCBQR"]["replications"]) == 3
    # the saved experiment file reloads to the same experiment
    again = ex.load_experiment(out / "experiment.yaml")
    assert again.to_dict() == ex.load_experiment(cfg).to_dict()


def test_rerun_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL)
    cli.main(["run", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["run", str(cfg), "--out", str(tmp_path / "b")])
    for p in sorted((tmp_path / "a").rglob("*.csv")):
        q = tmp_path / "b" / p.relative_to(tmp_path / "a")
        assert p.read_bytes() == q.read_bytes(), p.name


def test_worker_pool_matches_serial(tmp_path, monkeypatch):
    exp = ex.Experiment.from_dict(MINIMAL)
    serial = ex.run_experiment(exp, workers=1)
    monkeypatch.setenv(ex.WORKERS_ENV, "2")
    assert ex.worker_count() == 2
    par = ex.run_experiment(exp)
    for name in serial.reports:
        assert serial.reports[name].to_csv() == par.reports[name].to_csv()


def test_paired_seeds_across_policies():
    exp = ex.Experiment.from_dict(MINIMAL)
    res = ex.run_experiment(exp, keep_logs=True)
    a = res.reports["UCBQR"].extra["logs"]
    b = res.reports["FCFS_ALIS"].extra["logs"]
    for la, lb in zip(a, b):
        assert [(r[0], r[3]) for r in la.records if r[2] == ARRIVAL] == \
               [(r[0], r[3]) for r in lb.records if r[2] == ARRIVAL]
    # different replications see different arrivals
    assert [r[0] for r in a[0].records if r[2] == ARRIVAL] != [r[0] for r in a[1].records if r[2] == ARRIVAL]


def test_sweep_cells_and_reference(tmp_path):
    doc = dict(MINIMAL, replications=2,
               policies=[{"kind": "UCBQR"}, {"kind": "ORACLE", "sweep": False}],
               sweep={"episode_length": [50.0, 100.0]})
    exp = ex.Experiment.from_dict(doc)
    assert [c.name for c in exp.cells()] == ["UCBQR__episode_length=50.0",
                                             "UCBQR__episode_length=100.0", "ORACLE"]
    res = ex.run_experiment(exp)
    assert res.report("ORACLE").payoff_relative_to_oracle == 1.0
    r = res.report("UCBQR", episode_length=50.0)
    assert r.payoff_relative_to_oracle == pytest.approx(r.total_payoff / res.report("ORACLE").total_payoff)


def test_gamma_sweep_monotone_variance():
    res = ex.run_preset("fairness-sweep")
    assert res.status == 0, ex.format_checks(res.checks)
    v = [res.report("ORACLE", gamma=g).load_variance for g in (0.0, 0.01, 0.1, 1.0)]
    assert all(b <= a + 1e-4 for a, b in zip(v, v[1:]))


@pytest.mark.parametrize("doc", [
    "policies: [",                                       # not YAML
    yaml.safe_dump({"scenario": {"builtin": "day"}}),    # no policies
    yaml.safe_dump(dict(MINIMAL, policies=[{"kind": "NOPE"}])),
    yaml.safe_dump(dict(MINIMAL, policies=[{"kind": "UCBQR", "epsilon": 2}])),
    yaml.safe_dump(dict(MINIMAL, replications=0)),
    yaml.safe_dump(dict(MINIMAL, sweep={"gamma": []})),
    yaml.safe_dump(dict(MINIMAL, extra=1)),
    yaml.safe_dump(dict(MINIMAL, scenario={"builtin": "nope"})),
])
def test_config_errors_exit_2(tmp_path, doc):
    p = tmp_path / "bad.yaml"
    p.write_text(doc)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == ex.EXIT_CONFIG
    assert cli.main(["validate", str(p)]) == ex.EXIT_CONFIG


def test_missing_file_and_bad_args_exit_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == ex.EXIT_CONFIG
    assert cli.main(["preset", "no-such-preset"]) == ex.EXIT_CONFIG


@pytest.mark.parametrize("scenario", [
    {"calllog": {"path": "nope.csv", "schedule": "nope.csv", "day": "2001-06-01"}},
    {"synthetic": {"num_types": 1, "num_servers": 1, "rates": [-1.0], "service_mean": [{"server": 0, "mean": 1}]}},
    {"system": {"num_types": 1, "num_servers": 1, "lines": [[0, 0]],
                "arrivals": [{"poisson": 1.0}],
                "services": [{"line": [0, 0], "kind": "exponential", "mean": 1.0}],
                "payoff": [{"line": [0, 0], "theta": 1.5}]}, "horizon": 10},
])
def test_scenario_errors_exit_3(tmp_path, scenario):
    p = write_cfg(tmp_path, dict(MINIMAL, scenario=scenario, policies=[{"kind": "FCFS_ALIS"}]))
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == ex.EXIT_SCENARIO


def test_solver_failure_exit_4_partial_manifest(tmp_path, monkeypatch):
    def boom(problem):
        raise lp.NumericalFailure("simplex iteration cap")
    monkeypatch.setattr(lp, "solve_routing", boom)
    p = write_cfg(tmp_path, MINIMAL)
    out = tmp_path / "o"
    assert cli.main(["run", str(p), "--out", str(out)]) == ex.EXIT_SOLVER
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "partial" and m["exit_code"] == 4
    assert m["cells"]["UCBQR"]["status"] == "failed"
    assert "iteration cap" in m["cells"]["UCBQR"]["error"]
    assert m["cells"]["FCFS_ALIS"]["status"] == "ok"
    assert (out / "cells" / "FCFS_ALIS.csv").exists()


def test_validate_command(tmp_path, capsys):
    p = write_cfg(tmp_path, MINIMAL)
    assert cli.main(["validate", str(p)]) == 0
    assert "2 cells x 3 replications" in capsys.readouterr().out


def test_system_scenario_with_timestamps(tmp_path):
    doc = dict(MINIMAL, replications=1, policies=[{"kind": "GREEDY"}], scenario={
        "system": {"num_types": 1, "num_servers": 1, "lines": [[0, 0]],
                   "arrivals": [{"timestamps": [1.0, 2.0, 3.0]}],
                   "services": [{"line": [0, 0], "kind": "deterministic", "value": 5.0}],
                   "payoff": [{"line": [0, 0], "theta": 1.0}]},
        "horizon": 100.0})
    res = ex.run_experiment(ex.Experiment.from_dict(doc))
    rep = res.report("GREEDY")
    assert rep.completions == 3 and rep.total_payoff == 3 and rep.mean_wait == pytest.approx(4.0)  # waits 0, 4, 8


def test_preset_names():
    assert set(ex.PRESETS) == {"appendix-d", "fairness-sweep", "burst-incident", "episode-sweep",
                               "estimator-ablation"}
    exp = ex.preset_experiment("burst-incident")
    assert len(exp.scenario.bursts) == 3 and all(b["count"] == 2000 for b in exp.scenario.bursts)
