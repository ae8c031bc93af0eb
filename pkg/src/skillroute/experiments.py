"""Config-driven experiment runner.

An experiment is a scenario, a list of policies, optional sweep axes over
policy parameters and a number of replications. Every (policy, sweep point)
pair is a *cell*; replication ``r`` of every cell uses seed ``seed + r`` and,
for synthetic scenarios, the arrival stream generated from that seed, so
policies are compared on identical inputs.

Configuration files are YAML. See ``Experiment.from_dict`` for the schema.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import yaml

from . import data
from .engine import EventLog, run_replication
from .metrics import KpiReport, ZeroOracle, compute_kpis, relative_payoff
from .model import (ArrivalSource, CapacitySchedule, ConfigInvalid, Distribution, PolicyKind,
                    PolicySpec, SystemConfig, validate_config)

log = logging.getLogger(__name__)

WORKERS_ENV = "SKILLROUTE_WORKERS"
EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SCENARIO, EXIT_SOLVER = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    """The experiment file cannot be parsed or has bad fields."""


class ScenarioError(ValueError):
    """The scenario cannot be built or is not a valid system."""


# ---------------------------------------------------------------------------
# SystemConfig <-> plain data


def _dist_to_dict(d: Distribution) -> dict:
    out: dict[str, Any] = {"kind": d.kind}
    if d.kind == "empirical":
        out["samples"] = list(d.samples)
    elif d.kind == "deterministic":
        out["value"] = d.mean_value
    else:
        out["mean"] = d.mean_value
        if d.kind == "lognormal":
            out["cv"] = d.cv
    return out


def _dist_from_dict(m: Mapping) -> Distribution:
    kind = m["kind"]
    if kind == "empirical":
        return Distribution.empirical(m["samples"])
    if kind == "deterministic":
        return Distribution.deterministic(m["value"])
    if kind == "exponential":
        return Distribution.exponential(m["mean"])
    if kind == "lognormal":
        return Distribution.lognormal(m["mean"], m.get("cv", 1.0))
    raise ConfigError(f"unknown distribution kind {kind!r}")


def system_to_dict(cfg: SystemConfig) -> dict:
    arr = []
    for src in cfg.arrivals:
        if src.timestamps is not None:
            arr.append({"timestamps": list(src.timestamps)})
        else:
            arr.append({"interarrival": _dist_to_dict(src.interarrival)})
    return {
        "num_types": cfg.num_types,
        "num_servers": cfg.num_servers,
        "lines": [list(l) for l in cfg.lines],
        "arrivals": arr,
        "services": [dict(line=list(l), **_dist_to_dict(cfg.services[l])) for l in cfg.lines],
        "payoff": [{"line": list(l), "theta": cfg.payoff[l]} for l in cfg.lines],
        "capacity": [{"times": list(c.times), "counts": list(c.counts)} for c in cfg.capacity],
    }


def system_from_dict(m: Mapping) -> SystemConfig:
    try:
        arrivals = []
        for a in m["arrivals"]:
            if "timestamps" in a:
                arrivals.append(ArrivalSource.from_times(a["timestamps"]))
            elif "poisson" in a:
                arrivals.append(ArrivalSource.poisson(float(a["poisson"])))
            else:
                arrivals.append(ArrivalSource(interarrival=_dist_from_dict(a["interarrival"])))
        services = {tuple(s["line"]): _dist_from_dict(s) for s in m["services"]}
        payoff = {tuple(p["line"]): p["theta"] for p in m["payoff"]}
        caps = tuple(CapacitySchedule(tuple(float(t) for t in c["times"]), tuple(c["counts"]))
                     for c in m.get("capacity", ()))
        return SystemConfig(int(m["num_types"]), int(m["num_servers"]),
                            tuple(tuple(l) for l in m["lines"]), tuple(arrivals), services,
                            payoff, caps)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad system description: {exc!r}") from exc


def save_system(cfg: SystemConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(system_to_dict(cfg), sort_keys=False))


def load_system(path) -> SystemConfig:
    return system_from_dict(yaml.safe_load(Path(path).read_text()))


# ---------------------------------------------------------------------------
# scenarios


BUILTIN = {
    "appendix-d": lambda **kw: data.appendix_d_spec(**kw),
    "day": lambda **kw: data.day_spec(**kw),
    "learning": lambda **kw: data.learning_spec(**kw),
    "fairness": lambda **kw: data.fairness_spec(**kw),
}


def _synthetic_from_dict(m: Mapping) -> data.SyntheticSpec:
    m = dict(m)
    if "lines" in m and m["lines"] is not None:
        m["lines"] = [tuple(l) for l in m["lines"]]
    if "theta" in m:
        m["theta"] = {tuple(t["line"]): float(t["theta"]) for t in m["theta"]}
    if "service_mean" in m:
        sm = {}
        for e in m["service_mean"]:
            key = tuple(e["line"]) if "line" in e else int(e["server"])
            sm[key] = float(e["mean"])
        m["service_mean"] = sm
    if "theta_range" in m:
        m["theta_range"] = tuple(m["theta_range"])
    fields = {f.name for f in dataclasses.fields(data.SyntheticSpec)}
    unknown = set(m) - fields
    if unknown:
        raise ConfigError(f"unknown synthetic fields: {sorted(unknown)}")
    return data.SyntheticSpec(**m)


@dataclass(frozen=True)
class ScenarioSource:
    """Where a replication's system comes from.

    Exactly one of ``system`` (fixed config), ``synthetic`` (regenerated per
    replication seed) or ``calllog`` (fixed day of a call log) is set.
    ``bursts`` are injected into timestamp arrivals per replication.
    """

    system: SystemConfig | None = None
    synthetic: data.SyntheticSpec | None = None
    calllog: Mapping | None = None
    bursts: tuple = ()
    horizon: float | None = None

    @classmethod
    def from_dict(cls, m: Mapping) -> "ScenarioSource":
        if not isinstance(m, Mapping):
            raise ConfigError("scenario must be a mapping")
        bursts = tuple(dict(b) for b in m.get("bursts", ()))
        for b in bursts:
            if not {"type", "count", "start", "end"} <= set(b):
                raise ConfigError("each burst needs type, count, start and end")
        horizon = m.get("horizon")
        kinds = [k for k in ("system", "synthetic", "builtin", "calllog") if k in m]
        if len(kinds) != 1:
            raise ConfigError("scenario needs exactly one of system, synthetic, builtin, calllog")
        k = kinds[0]
        if k == "system":
            return cls(system=system_from_dict(m["system"]), bursts=bursts, horizon=horizon)
        if k == "synthetic":
            return cls(synthetic=_synthetic_from_dict(m["synthetic"]), bursts=bursts,
                       horizon=horizon)
        if k == "builtin":
            name = m["builtin"]
            if name not in BUILTIN:
                raise ConfigError(f"unknown builtin scenario {name!r}; choose from {sorted(BUILTIN)}")
            try:
                spec = BUILTIN[name](**dict(m.get("args", {})))
            except TypeError as exc:
                raise ConfigError(f"bad arguments for builtin {name!r}: {exc}") from exc
            return cls(synthetic=spec, bursts=bursts, horizon=horizon)
        cl = dict(m["calllog"])
        if not {"path", "schedule", "day"} <= set(cl):
            raise ConfigError("calllog needs path, schedule and day")
        return cls(calllog=cl, bursts=bursts, horizon=horizon)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        if self.system is not None:
            out["system"] = system_to_dict(self.system)
        elif self.synthetic is not None:
            s = self.synthetic
            d = dataclasses.asdict(s)
            d["lines"] = None if s.lines is None else [list(l) for l in s.lines]
            d["theta"] = [{"line": list(l), "theta": v} for l, v in s.theta.items()]
            d["service_mean"] = [({"line": list(k)} if isinstance(k, tuple) else {"server": k})
                                 | {"mean": v} for k, v in s.service_mean.items()]
            d["theta_range"] = list(s.theta_range)
            d["rates"] = [r if isinstance(r, (int, float)) else [list(p) for p in r]
                          for r in s.rates]
            d["agents"] = [a if isinstance(a, int) else list(a) for a in s.agents]
            out["synthetic"] = d
        else:
            out["calllog"] = dict(self.calllog)
        if self.bursts:
            out["bursts"] = [dict(b) for b in self.bursts]
        if self.horizon is not None:
            out["horizon"] = self.horizon
        return out

    def build(self, r_seed: int, base_dir: Path | None = None) -> tuple[SystemConfig, float]:
        """System and horizon for the replication with seed ``r_seed``."""
        try:
            if self.system is not None:
                cfg, horizon = self.system, self.horizon
                if self.bursts:
                    raise ScenarioError("bursts need a synthetic or call-log scenario")
            else:
                if self.synthetic is not None:
                    sc = data.generate_synthetic(self.synthetic, r_seed)
                else:
                    sc = self._calllog(base_dir)
                for n, b in enumerate(self.bursts):
                    sc = data.inject_burst(sc, int(b["type"]), int(b["count"]),
                                           (float(b["start"]), float(b["end"])),
                                           seed=1000 * r_seed + n)
                cfg, horizon = sc.config, self.horizon or sc.horizon
        except (data.InvalidSpec, ValueError, OSError) as exc:
            raise ScenarioError(str(exc)) from exc
        if horizon is None:
            raise ScenarioError("a fixed system needs an explicit horizon")
        problems = validate_config(cfg)
        if problems:
            raise ScenarioError("; ".join(problems))
        return cfg, float(horizon)

    def _calllog(self, base_dir):
        cl = self.calllog
        base = base_dir or Path(".")
        records = data.read_call_log(base / cl["path"])
        sched = data.read_agent_schedule(base / cl["schedule"])
        return data.build_scenario(records, sched, str(cl["day"]),
                                   threshold=int(cl.get("threshold", 100)),
                                   transform=bool(cl.get("transform", False)))


# ---------------------------------------------------------------------------
# experiment description


_SPEC_FIELDS = {f.name for f in dataclasses.fields(PolicySpec)}


def policy_from_dict(m: Mapping) -> PolicySpec:
    m = dict(m)
    m.pop("sweep", None)
    unknown = set(m) - _SPEC_FIELDS
    if unknown:
        raise ConfigError(f"unknown policy fields: {sorted(unknown)}")
    if "fixed_rates" in m and m["fixed_rates"] is not None:
        m["fixed_rates"] = {tuple(e["line"]): float(e["rate"]) for e in m["fixed_rates"]}
    try:
        spec = PolicySpec(**m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad policy {m!r}: {exc}") from exc
    bad = spec.violations()
    if bad:
        raise ConfigError(f"policy {spec.label}: " + "; ".join(bad))
    return spec


def policy_to_dict(p: PolicySpec) -> dict:
    d = dataclasses.asdict(p)
    d["kind"] = p.kind.value
    if p.fixed_rates is not None:
        d["fixed_rates"] = [{"line": list(l), "rate": v} for l, v in p.fixed_rates.items()]
    if d["name"] is None:
        del d["name"]
    if not p.tree or p.kind is PolicyKind.UCBQR_TREE:
        del d["tree"]
    return d


@dataclass
class Experiment:
    name: str
    scenario: ScenarioSource
    policies: list[PolicySpec]
    replications: int = 1
    seed: int = 0
    sweep: dict[str, list] = field(default_factory=dict)
    unswept: set[str] = field(default_factory=set)   # policy labels excluded from the sweep
    reference: str | None = None                      # label for relative payoffs
    bin_width: float = 60.0
    office_window: tuple[float, float] = (6 * 3600.0, 21 * 3600.0)
    out: str | None = None
    base_dir: Path | None = None

    @classmethod
    def from_dict(cls, m: Mapping, base_dir: Path | None = None) -> "Experiment":
        """Schema::

            name: str
            scenario: {system: ... | synthetic: ... | builtin: NAME, args: {...} | calllog: ...,
                       bursts: [{type, count, start, end}], horizon: seconds}
            policies: [{kind: UCBQR, episode_length: 120, ..., sweep: true}]
            replications: int      (default 1)
            seed: int              (default 0)
            sweep: {field: [values]}  (cartesian product over PolicySpec fields)
            reference: policy label for relative payoffs (default: ORACLE if present)
            bin_width: seconds, office_window: [start, end], out: directory
        """
        if not isinstance(m, Mapping):
            raise ConfigError("experiment file must hold a mapping")
        known = {"name", "scenario", "policies", "replications", "seed", "sweep", "reference",
                 "bin_width", "office_window", "out"}
        unknown = set(m) - known
        if unknown:
            raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")
        if "scenario" not in m or "policies" not in m:
            raise ConfigError("experiment needs scenario and policies")
        pols = m["policies"]
        if not isinstance(pols, list) or not pols:
            raise ConfigError("policies must be a non-empty list")
        policies = [policy_from_dict(p) for p in pols]
        labels = [p.label for p in policies]
        if len(set(labels)) != len(labels):
            raise ConfigError("policy labels must be unique; set name: on duplicates")
        unswept = {p.label for p, raw in zip(policies, pols) if raw.get("sweep", True) is False}
        reps = m.get("replications", 1)
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError("replications must be an integer >= 1")
        sweep = dict(m.get("sweep") or {})
        for k, v in sweep.items():
            if k not in _SPEC_FIELDS or k in ("kind", "name", "fixed_rates"):
                raise ConfigError(f"cannot sweep {k!r}")
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sweep grid for {k!r} must be a non-empty list")
        ref = m.get("reference")
        if ref is None and "ORACLE" in labels:
            ref = "ORACLE"
        if ref is not None and ref not in labels:
            raise ConfigError(f"reference {ref!r} is not one of the policies")
        ow = tuple(float(x) for x in m.get("office_window", (6 * 3600.0, 21 * 3600.0)))
        return cls(
            name=str(m.get("name", "experiment")), scenario=ScenarioSource.from_dict(m["scenario"]),
            policies=policies, replications=reps, seed=int(m.get("seed", 0)), sweep=sweep,
            unswept=unswept, reference=ref, bin_width=float(m.get("bin_width", 60.0)),
            office_window=ow, out=m.get("out"), base_dir=base_dir,
        )

    def to_dict(self) -> dict:
        pols = []
        for p in self.policies:
            d = policy_to_dict(p)
            if p.label in self.unswept:
                d["sweep"] = False
            pols.append(d)
        out = {"name": self.name, "scenario": self.scenario.to_dict(), "policies": pols,
               "replications": self.replications, "seed": self.seed,
               "bin_width": self.bin_width, "office_window": list(self.office_window)}
        if self.sweep:
            out["sweep"] = self.sweep
        if self.reference:
            out["reference"] = self.reference
        if self.out:
            out["out"] = self.out
        return out

    def cells(self) -> list["Cell"]:
        axes = sorted(self.sweep)
        points = [dict(zip(axes, vals)) for vals in itertools.product(*(self.sweep[a] for a in axes))]
        out = []
        for p in self.policies:
            for pt in (points if self.sweep and p.label not in self.unswept else [{}]):
                spec = dataclasses.replace(p, **pt) if pt else p
                bad = spec.violations()
                if bad:
                    raise ConfigError(f"sweep point {pt} for {p.label}: " + "; ".join(bad))
                out.append(Cell(p.label, pt, spec))
        return out


def load_experiment(path) -> Experiment:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return Experiment.from_dict(raw, base_dir=path.parent)


@dataclass
class Cell:
    policy: str
    point: dict
    spec: PolicySpec

    @property
    def name(self) -> str:
        if not self.point:
            return self.policy
        return self.policy + "__" + "_".join(f"{k}={v}" for k, v in sorted(self.point.items()))


# ---------------------------------------------------------------------------
# running


def _run_one(args) -> EventLog:
    scenario, spec, seed, base_dir = args
    cfg, horizon = scenario.build(seed, base_dir)
    return run_replication(cfg, spec, seed, horizon)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


@dataclass
class ExperimentResult:
    experiment: Experiment
    reports: dict[str, KpiReport]
    cells: list[Cell]
    failed: dict[str, str]
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    # one report per replication, keyed like ``reports``, in seed order
    replication_reports: dict[str, list[KpiReport]] = field(default_factory=dict)

    @property
    def status(self) -> int:
        if self.failed:
            return EXIT_SOLVER
        if any(not ok for _, ok, _ in self.checks):
            return EXIT_CHECKS
        return EXIT_OK

    def report(self, policy: str, **point) -> KpiReport:
        for c in self.cells:
            if c.policy == policy and c.point == point:
                return self.reports[c.name]
        raise KeyError((policy, point))


def run_experiment(exp: Experiment, workers: int | None = None,
                   keep_logs: bool = False) -> ExperimentResult:
    """Run every cell. Raises :class:`ScenarioError` before any simulation
    if the scenario cannot be built."""
    cells = exp.cells()
    exp.scenario.build(exp.seed, exp.base_dir)  # fail fast on scenario errors
    seeds = [exp.seed + r for r in range(exp.replications)]
    jobs = [(exp.scenario, c.spec, s, exp.base_dir) for c in cells for s in seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        logs = [_run_one(j) for j in jobs]

    reports, failed, per_rep = {}, {}, {}
    R = exp.replications
    for n, c in enumerate(cells):
        cell_logs = logs[n * R:(n + 1) * R]
        bad = [lg for lg in cell_logs if lg.aborted]
        if bad:
            failed[c.name] = bad[0].error or "policy failure"
        reports[c.name] = compute_kpis(cell_logs, exp.bin_width, exp.office_window)
        per_rep[c.name] = [compute_kpis([lg], exp.bin_width, exp.office_window) for lg in cell_logs]
        if keep_logs:
            reports[c.name].extra["logs"] = cell_logs
    if exp.reference:
        for c in cells:
            ref = next((d for d in cells if d.policy == exp.reference and
                        (d.point == c.point or exp.reference in exp.unswept or not exp.sweep)), None)
            if ref is None:
                continue
            try:
                reports[c.name].payoff_relative_to_oracle = relative_payoff(reports[c.name],
                                                                            reports[ref.name])
            except ZeroOracle:
                reports[c.name].payoff_relative_to_oracle = math.nan
    return ExperimentResult(exp, reports, cells, failed, replication_reports=per_rep)


SUMMARY_COLUMNS = ("cell", "policy", "sweep", "replications", "total_payoff", "completions",
                   "payoff_per_completion", "payoff_relative_to_oracle", "mean_wait",
                   "office_wait_median", "office_wait_mean", "load_variance", "aborted")


def _cell_repr(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    """Per-cell CSV/JSON reports (pooled over replications in ``cells/``, one
    per replication in ``replications/``), ``summary.csv``, ``manifest.json``
    and, for presets, ``checks.txt``."""
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    (out / "replications").mkdir(parents=True, exist_ok=True)
    seeds = [result.experiment.seed + r for r in range(result.experiment.replications)]
    rows = []
    for c in result.cells:
        rep = result.reports[c.name]
        (out / "cells" / f"{c.name}.csv").write_text(rep.to_csv())
        (out / "cells" / f"{c.name}.json").write_text(rep.to_json())
        for s, rr in zip(seeds, result.replication_reports.get(c.name, ())):
            (out / "replications" / f"{c.name}__seed={s}.csv").write_text(rr.to_csv())
            (out / "replications" / f"{c.name}__seed={s}.json").write_text(rr.to_json())
        sc = rep.scalars()
        sweep = ";".join(f"{k}={v}" for k, v in sorted(c.point.items()))
        rows.append([c.name, c.policy, sweep] + [_cell_repr(sc[k]) for k in SUMMARY_COLUMNS[3:]])
    lines = [",".join(SUMMARY_COLUMNS)] + [",".join(r) for r in rows]
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    manifest = {
        "experiment": result.experiment.name,
        "status": "complete" if not result.failed else "partial",
        "exit_code": result.status,
        "cells": {c.name: {"status": "failed" if c.name in result.failed else "ok",
                           "error": result.failed.get(c.name),
                           "report_csv": f"cells/{c.name}.csv",
                           "report_json": f"cells/{c.name}.json",
                           "replications": [f"replications/{c.name}__seed={s}.csv" for s in seeds]}
                  for c in result.cells},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (out / "experiment.yaml").write_text(yaml.safe_dump(result.experiment.to_dict(), sort_keys=False))
    if result.checks:
        (out / "checks.txt").write_text(format_checks(result.checks) + "\n")
    return out


def format_checks(checks) -> str:
    return "\n".join(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in checks)


# ---------------------------------------------------------------------------
# presets

HOUR = 3600.0
APPENDIX_D_TARGET_RATES = {(0, 0): 0.863, (0, 1): 2.153, (1, 1): 2.649, (1, 2): 4.338, (2, 2): 5.0}
APPENDIX_D_TARGET_LOAD = (0.852, 0.955, 0.936)
BURSTS = ((0, 10 * HOUR), (1, 11 * HOUR), (2, 12 * HOUR))
STATIC_AND_LEARNING = ("UCBQR", "UCBQR_TREE", "ORACLE", "FCFS_ALIS", "GREEDY", "RANDOM", "THETA_MU")


def _preset_appendix_d(replications=100, seed=0):
    rates = data.appendix_d_rates(0.01)
    sys_d = system_to_dict(data.appendix_d_config())
    return {
        "name": "appendix-d",
        "scenario": {"system": sys_d, "horizon": 500.0},
        "policies": [{"kind": "UCBQR_TREE", "episode_length": 10.0, "epsilon": 0.01,
                      "name": "TREE_FIXED",
                      "fixed_rates": [{"line": list(l), "rate": v} for l, v in rates.items()]}],
        "replications": replications, "seed": seed, "bin_width": 50.0,
    }


def check_appendix_d(result: ExperimentResult, rate_tol=0.08, load_tol=0.03):
    rep = result.report("TREE_FIXED")
    out = []
    final = rep.empirical_rates[-1]
    for n, l in enumerate(rep.lines):
        target = APPENDIX_D_TARGET_RATES.get(l, 0.0)
        if target == 0.0 and final[n] == 0.0:
            continue
        ok = abs(final[n] - target) <= rate_tol
        out.append((f"D{l[0] + 1}{l[1] + 1}(500)/500", ok,
                    f"{final[n]:.3f} vs {target:.3f} +/- {rate_tol}"))
    for j, target in enumerate(APPENDIX_D_TARGET_LOAD):
        b = rep.server_load[j]
        out.append((f"W{j + 1}(500)/500", abs(b - target) <= load_tol,
                    f"{b:.3f} vs {target:.3f} +/- {load_tol}"))
    return out


def _preset_fairness(replications=3, seed=0):
    return {
        "name": "fairness-sweep",
        "scenario": {"builtin": "fairness"},
        "policies": [{"kind": "ORACLE"}],
        "sweep": {"gamma": [0.0, 0.01, 0.1, 1.0]},
        "replications": replications, "seed": seed, "bin_width": 600.0,
    }


def check_fairness(result: ExperimentResult):
    g = result.experiment.sweep["gamma"]
    var = [result.report("ORACLE", gamma=x).load_variance for x in g]
    pay = [result.report("ORACLE", gamma=x).payoff_per_completion for x in g]
    tol = 1e-4
    return [
        ("load variance non-increasing in gamma",
         all(b <= a + tol for a, b in zip(var, var[1:])), " ".join(f"{v:.5f}" for v in var)),
        ("payoff per completion non-increasing in gamma",
         all(b <= a + 5e-3 for a, b in zip(pay, pay[1:])), " ".join(f"{v:.4f}" for v in pay)),
    ]


def _preset_burst(replications=2, seed=0):
    return {
        "name": "burst-incident",
        "scenario": {"builtin": "day", "args": {"scale": 0.5},
                     "bursts": [{"type": i, "count": 2000, "start": t, "end": t + 600.0}
                                for i, t in BURSTS]},
        "policies": [{"kind": k} for k in STATIC_AND_LEARNING],
        "replications": replications, "seed": seed, "bin_width": 600.0,
    }


BURST_PRE = (8 * HOUR, 10 * HOUR)
BURST_POST = (16 * HOUR, 18 * HOUR)


def check_burst(result: ExperimentResult, peak_factor=2.0, recover_factor=2.0):
    out = []
    for c in result.cells:
        rep = result.reports[c.name]
        pre = rep.window_wait(*BURST_PRE)
        post = rep.window_wait(*BURST_POST)
        peaks = [rep.peak_wait(t, t + HOUR) for _, t in BURSTS]
        out.append((f"{c.name}: peak after each burst", all(p >= peak_factor * pre for p in peaks),
                    f"pre-burst mean {pre:.1f}s, peaks " + ", ".join(f"{p:.0f}s" for p in peaks)))
        out.append((f"{c.name}: recovery", post <= recover_factor * pre,
                    f"16:00-18:00 mean {post:.1f}s vs {recover_factor:g} x {pre:.1f}s"))
    return out


EPISODE_GRID = [60.0, 120.0, 300.0, 600.0, 1200.0]


def _preset_episode(replications=3, seed=0):
    return {
        "name": "episode-sweep",
        "scenario": {"builtin": "day"},
        "policies": [{"kind": "UCBQR"}, {"kind": "ORACLE", "sweep": False}],
        "sweep": {"episode_length": EPISODE_GRID},
        "reference": "ORACLE",
        "replications": replications, "seed": seed, "bin_width": 600.0,
    }


def check_episode(result: ExperimentResult, band=0.01):
    g = result.experiment.sweep["episode_length"]
    reps = [result.report("UCBQR", episode_length=h) for h in g]
    waits = [r.mean_wait for r in reps]
    rel = [r.payoff_relative_to_oracle for r in reps]
    return [
        ("mean wait non-decreasing in h", all(b >= a for a, b in zip(waits, waits[1:])),
         " ".join(f"h={h:g}:{w:.1f}s" for h, w in zip(g, waits))),
        (f"relative payoff spread < {band:.0%}", max(rel) - min(rel) < band,
         " ".join(f"{v:.4f}" for v in rel)),
    ]


def _preset_ablation(replications=3, seed=0):
    return {
        "name": "estimator-ablation",
        "scenario": {"builtin": "day"},
        "policies": [{"kind": "UCBQR", "name": "UCBQR_MU_LOW", "mu_init": 1e-3},
                     {"kind": "UCBQR", "name": "UCBQR_MU_HIGH", "mu_init": 10.0},
                     {"kind": "UCBQR_LAMBDA"}, {"kind": "UCBQR_MU"}, {"kind": "ORACLE"}],
        "replications": replications, "seed": seed, "bin_width": 600.0,
    }


RAMP = (6 * HOUR, 8 * HOUR)


def check_ablation(result: ExperimentResult, margin=0.2):
    low = result.report("UCBQR_MU_LOW").peak_wait(*RAMP)
    high = result.report("UCBQR_MU_HIGH").peak_wait(*RAMP)
    return [(f"morning-ramp peak with mu_init overestimate >= {1 + margin:g} x underestimate",
             high >= (1 + margin) * low, f"{high:.1f}s vs {low:.1f}s")]


PRESETS: dict[str, tuple[Callable[..., dict], Callable | None]] = {
    "appendix-d": (_preset_appendix_d, check_appendix_d),
    "fairness-sweep": (_preset_fairness, check_fairness),
    "burst-incident": (_preset_burst, check_burst),
    "episode-sweep": (_preset_episode, check_episode),
    "estimator-ablation": (_preset_ablation, check_ablation),
}


def preset_experiment(name: str, replications: int | None = None, seed: int = 0,
                      out: str | None = None) -> Experiment:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    build, _ = PRESETS[name]
    kw = {"seed": seed}
    if replications is not None:
        kw["replications"] = replications
    m = build(**kw)
    if out:
        m["out"] = out
    return Experiment.from_dict(m)


def run_preset(name: str, replications: int | None = None, seed: int = 0,
               workers: int | None = None) -> ExperimentResult:
    exp = preset_experiment(name, replications, seed)
    res = run_experiment(exp, workers)
    check = PRESETS[name][1]
    if check is not None and not res.failed:
        res.checks = check(res)
    return res
