"""Scenario construction from call logs or synthetic specifications.

Call logs are CSV files with header
``date,vru_entry,q_start,ser_start,ser_exit,type,outcome,agent_id,agent_group``
(times in integer seconds of the day, empty when missing). Agent schedules
are CSV files with header ``date,hour,agent_group,count``.

Customer type ids and agent group ids from the data are mapped to zero-based
indices in sorted order; ``Scenario.type_ids`` and ``Scenario.group_ids``
keep the mapping.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (ArrivalSource, CapacitySchedule, Distribution, Line, SystemConfig,
                    validate_config)

DAY = 86400.0


class Outcome(str, enum.Enum):
    HANDLED = "HANDLED"
    TRANSFER = "TRANSFER"
    CONFERENCE = "CONFERENCE"
    ABANDON = "ABANDON"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, s: str) -> "Outcome":
        try:
            return cls(s.strip().upper())
        except ValueError:
            return cls.OTHER


UNSUCCESSFUL = frozenset({Outcome.TRANSFER, Outcome.CONFERENCE})


class NoObservations(UserWarning):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class CallRecord:
    date: str
    vru_entry_time: float | None
    queue_join_time: float | None
    service_start_time: float | None
    service_end_time: float | None
    customer_type: int
    outcome: Outcome
    agent_id: str | None
    agent_group: int | None

    @property
    def served(self) -> bool:
        return (self.outcome is not Outcome.ABANDON and self.agent_group is not None
                and self.service_start_time is not None)

    @property
    def call_key(self) -> tuple:
        return (self.date, self.vru_entry_time, self.queue_join_time, self.customer_type)


def _opt_float(s):
    s = (s or "").strip()
    return float(s) if s else None


def _opt_int(s):
    s = (s or "").strip()
    return int(s) if s else None


def parse_call_rows(rows: Iterable[Mapping[str, str]], keep_abandoned: bool = False) -> list[CallRecord]:
    out = []
    for r in rows:
        rec = CallRecord(
            date=r["date"].strip(),
            vru_entry_time=_opt_float(r.get("vru_entry")),
            queue_join_time=_opt_float(r.get("q_start")),
            service_start_time=_opt_float(r.get("ser_start")),
            service_end_time=_opt_float(r.get("ser_exit")),
            customer_type=int(r["type"]),
            outcome=Outcome.parse(r.get("outcome", "")),
            agent_id=(r.get("agent_id") or "").strip() or None,
            agent_group=_opt_int(r.get("agent_group")),
        )
        if rec.outcome is Outcome.ABANDON and not keep_abandoned:
            continue
        out.append(rec)
    return out


def read_call_log(path, keep_abandoned: bool = False) -> list[CallRecord]:
    """Read a call-log CSV. Abandoned calls are dropped unless asked for.

    A call that passed through several agents appears as several rows; each
    row is kept as an independent record.
    """
    with open(path, newline="") as fh:
        return parse_call_rows(csv.DictReader(fh), keep_abandoned)


CALL_LOG_HEADER = ("date", "vru_entry", "q_start", "ser_start", "ser_exit", "type",
                   "outcome", "agent_id", "agent_group")


def write_call_log(path, records: Sequence[CallRecord]) -> None:
    def f(x):
        return "" if x is None else (str(int(x)) if isinstance(x, float) and x.is_integer() else str(x))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALL_LOG_HEADER)
        for r in records:
            w.writerow((r.date, f(r.vru_entry_time), f(r.queue_join_time), f(r.service_start_time),
                        f(r.service_end_time), r.customer_type, r.outcome.value,
                        r.agent_id or "", f(r.agent_group)))


def read_agent_schedule(path) -> dict[tuple[str, int], list[int]]:
    """``(date, agent_group) -> 24 hourly agent counts`` (missing hours are 0)."""
    sched: dict[tuple[str, int], list[int]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (r["date"].strip(), int(r["agent_group"]))
            h = int(r["hour"])
            if not 0 <= h < 24:
                raise ValueError(f"hour {h} outside 0..23")
            sched.setdefault(key, [0] * 24)[h] = int(r["count"])
    return sched


# -- payoff -------------------------------------------------------------------

def derive_payoff(records: Iterable[CallRecord], lines: Iterable[tuple[int, int]] | None = None
                  ) -> dict[tuple[int, int], float]:
    """Fraction of served calls per (type, group) that end without a transfer or conference.

    Lines requested in ``lines`` without any served call are dropped with a
    :class:`NoObservations` warning.
    """
    n = Counter()
    s = Counter()
    for r in records:
        if not r.served:
            continue
        key = (r.customer_type, r.agent_group)
        n[key] += 1
        if r.outcome not in UNSUCCESSFUL:
            s[key] += 1
    wanted = sorted(n) if lines is None else [tuple(l) for l in lines]
    out = {}
    for key in wanted:
        if n[key] == 0:
            warnings.warn(f"no served calls on line {key}; dropped", NoObservations, stacklevel=2)
            continue
        out[key] = s[key] / n[key]
    return out


def transform_payoff(theta: Mapping[tuple[int, int], float]) -> dict[tuple[int, int], float]:
    """Stretch payoffs per customer type: sqrt((θ - min) / (max - min)).

    Types with a single line get sqrt(θ); types whose lines all share one
    value get 1 everywhere.
    """
    by_type: dict[int, list] = defaultdict(list)
    for (i, j), v in theta.items():
        by_type[i].append(((i, j), float(v)))
    out = {}
    for i, items in by_type.items():
        vals = [v for _, v in items]
        if len(items) == 1:
            out[items[0][0]] = math.sqrt(max(vals[0], 0.0))
            continue
        lo, hi = min(vals), max(vals)
        for l, v in items:
            out[l] = 1.0 if hi == lo else math.sqrt((v - lo) / (hi - lo))
    return {l: out[l] for l in theta}


def build_compatibility(records: Iterable[CallRecord], threshold: int = 100) -> set[tuple[int, int]]:
    """Lines with at least ``threshold`` served calls.

    A call seen by several agents counts once, for the group of the first
    agent that served it.
    """
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    first: dict[tuple, CallRecord] = {}
    for r in records:
        if not r.served:
            continue
        k = r.call_key
        prev = first.get(k)
        if prev is None or r.service_start_time < prev.service_start_time:
            first[k] = r
    cnt = Counter((r.customer_type, r.agent_group) for r in first.values())
    return {l for l, c in cnt.items() if c >= threshold}


# -- scenario -----------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """A resolved system plus the raw inputs it came from.

    ``arrivals[i]`` is the sorted arrival-time array of type ``i``;
    ``pools[line]`` the service-duration sample behind the line's
    distribution; ``agent_counts[j]`` the hourly agent counts of server ``j``
    (empty for synthetic scenarios with constant staffing).
    """

    config: SystemConfig
    horizon: float
    arrivals: tuple[np.ndarray, ...]
    theta_by_day: Mapping[str, Mapping[Line, float]] = field(default_factory=dict)
    pools: Mapping[Line, np.ndarray] = field(default_factory=dict)
    agent_counts: tuple[tuple[int, ...], ...] = ()
    type_ids: tuple[int, ...] = ()
    group_ids: tuple[int, ...] = ()
    name: str = ""

    def with_arrivals(self, arrivals: Sequence[np.ndarray]) -> "Scenario":
        arrivals = tuple(np.sort(np.asarray(a, dtype=float)) for a in arrivals)
        cfg = replace(self.config, arrivals=tuple(ArrivalSource.from_times(a) for a in arrivals))
        return replace(self, config=cfg, arrivals=arrivals)

    def arrival_count(self, i: int, start: float = -math.inf, end: float = math.inf) -> int:
        a = self.arrivals[i]
        return int(np.searchsorted(a, end, side="left") - np.searchsorted(a, start, side="left"))


def hourly_schedule(counts: Sequence[int], period: float = 3600.0) -> CapacitySchedule:
    """Capacity schedule from per-period counts, keeping only actual changes."""
    times, vals = [], []
    for h, c in enumerate(counts):
        if not vals or vals[-1] != int(c):
            times.append(period * h)
            vals.append(int(c))
    return CapacitySchedule(tuple(times), tuple(vals)) if times else CapacitySchedule.constant(0)


def build_scenario(records: Sequence[CallRecord], schedule: Mapping[tuple[str, int], Sequence[int]],
                   day: str, threshold: int = 100, transform: bool = False,
                   lines: Iterable[tuple[int, int]] | None = None) -> Scenario:
    """Scenario for one day of a month-long call log.

    The compatibility set and service pools come from the whole log;
    arrivals (queue-join times) and payoffs come from ``day``. A line with
    no served call on ``day`` falls back to its monthly payoff.
    """
    pairs = set(build_compatibility(records, threshold)) if lines is None else {tuple(l) for l in lines}
    if not pairs:
        raise InvalidSpec("no compatible lines")
    types = sorted({i for i, _ in pairs})
    groups = sorted({j for _, j in pairs})
    ti = {t: n for n, t in enumerate(types)}
    gj = {g: n for n, g in enumerate(groups)}
    raw_lines = sorted(pairs, key=lambda l: (ti[l[0]], gj[l[1]]))
    lines_idx = tuple((ti[i], gj[j]) for i, j in raw_lines)

    pools: dict[Line, list] = defaultdict(list)
    for r in records:
        if r.served and r.service_end_time is not None and (r.customer_type, r.agent_group) in pairs:
            d = r.service_end_time - r.service_start_time
            if d > 0:
                pools[(ti[r.customer_type], gj[r.agent_group])].append(d)
    missing = [l for l in raw_lines if not pools.get((ti[l[0]], gj[l[1]]))]
    if missing:
        raise InvalidSpec(f"lines without service durations: {missing}")

    days = sorted({r.date for r in records})
    theta_by_day = {}
    month = derive_payoff(records, raw_lines)
    for d in days:
        recs_d = [r for r in records if r.date == d]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoObservations)
            th = derive_payoff(recs_d, raw_lines)
        th = {l: th.get(l, month[l]) for l in raw_lines}
        if transform:
            th = transform_payoff(th)
        theta_by_day[d] = {(ti[i], gj[j]): v for (i, j), v in th.items()}
    if day not in theta_by_day:
        raise InvalidSpec(f"day {day!r} not in the call log")

    arr = [[] for _ in types]
    for r in records:
        if r.date == day and r.customer_type in ti and r.queue_join_time is not None:
            arr[ti[r.customer_type]].append(r.queue_join_time)
    arrivals = tuple(np.sort(np.asarray(a, dtype=float)) for a in arr)

    counts = tuple(tuple(int(c) for c in schedule.get((day, g), [0] * 24)) for g in groups)
    cfg = SystemConfig(
        num_types=len(types), num_servers=len(groups), lines=lines_idx,
        arrivals=tuple(ArrivalSource.from_times(a) for a in arrivals),
        services={l: Distribution.empirical(pools[l]) for l in lines_idx},
        payoff=dict(theta_by_day[day]),
        capacity=tuple(hourly_schedule(c) for c in counts),
    )
    return Scenario(cfg, DAY, arrivals, theta_by_day,
                    {l: np.asarray(pools[l]) for l in lines_idx}, counts,
                    tuple(types), tuple(groups), name=f"calllog-{day}")


def inject_burst(scenario: Scenario, i: int, count: int, window: tuple[float, float],
                 seed: int) -> Scenario:
    """Add ``count`` type-``i`` arrivals uniform on ``window``; other arrivals untouched."""
    t1, t2 = map(float, window)
    if not t1 < t2:
        raise ValueError("burst window must have t1 < t2")
    if not 0 <= i < len(scenario.arrivals):
        raise ValueError(f"unknown customer type {i}")
    if count <= 0:
        return scenario
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7, i)))
    extra = rng.uniform(t1, t2, size=int(count))
    arr = list(scenario.arrivals)
    arr[i] = np.sort(np.concatenate([arr[i], extra]), kind="stable")
    return scenario.with_arrivals(arr)


# -- synthetic ----------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic scenario.

    ``rates[i]`` is either a constant rate or a list of ``(start, rate)``
    breakpoints (piecewise constant, starting at 0). ``service_mean`` maps a
    line, or a server index, to the mean work per customer of one agent.
    ``theta`` maps lines to payoffs; lines omitted draw uniformly from
    ``theta_range``. ``agents[j]`` is a constant count or hourly counts.
    With ``pool_size`` set, service times become empirical pools of that
    size instead of parametric distributions.
    """

    num_types: int
    num_servers: int
    rates: Sequence
    service_mean: Mapping
    lines: Sequence[Line] | None = None
    theta: Mapping[Line, float] = field(default_factory=dict)
    theta_range: tuple[float, float] = (0.0, 1.0)
    service_kind: str = "exponential"
    service_cv: float = 1.0
    agents: Sequence = ()
    horizon: float = DAY
    pool_size: int | None = None
    hour: float = 3600.0
    name: str = "synthetic"


def _rate_pieces(profile, horizon: float) -> list[tuple[float, float, float]]:
    if isinstance(profile, (int, float)):
        pts = [(0.0, float(profile))]
    else:
        pts = [(float(t), float(r)) for t, r in profile]
    if not pts or pts[0][0] != 0.0:
        raise InvalidSpec("rate profile must start at time 0")
    out = []
    for n, (t, r) in enumerate(pts):
        if r < 0:
            raise InvalidSpec("negative arrival rate")
        end = pts[n + 1][0] if n + 1 < len(pts) else horizon
        if end <= t and n + 1 < len(pts):
            raise InvalidSpec("rate breakpoints must increase")
        out.append((t, min(end, horizon), r))
    return out


def poisson_times(profile, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-homogeneous Poisson arrival times on ``[0, horizon)``."""
    chunks = []
    for t0, t1, r in _rate_pieces(profile, horizon):
        if r <= 0 or t1 <= t0:
            continue
        n = rng.poisson(r * (t1 - t0))
        chunks.append(rng.uniform(t0, t1, size=n))
    return np.sort(np.concatenate(chunks)) if chunks else np.zeros(0)


def _check_spec(spec: SyntheticSpec) -> list[Line]:
    I, J = spec.num_types, spec.num_servers
    if I < 1 or J < 1:
        raise InvalidSpec("need at least one type and one server")
    if len(spec.rates) != I:
        raise InvalidSpec(f"expected {I} rate profiles, got {len(spec.rates)}")
    lines = [tuple(l) for l in (spec.lines if spec.lines is not None
                                else [(i, j) for i in range(I) for j in range(J)])]
    if any(not (0 <= i < I and 0 <= j < J) for i, j in lines):
        raise InvalidSpec("line index out of range")
    if spec.service_kind not in ("exponential", "lognormal"):
        raise InvalidSpec(f"unknown service kind {spec.service_kind!r}")
    if spec.agents and len(spec.agents) != J:
        raise InvalidSpec(f"expected {J} agent schedules, got {len(spec.agents)}")
    lo, hi = spec.theta_range
    if not 0 <= lo <= hi <= 1:
        raise InvalidSpec("theta_range must lie inside [0, 1]")
    if not spec.horizon > 0:
        raise InvalidSpec("horizon must be positive")
    return lines


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> Scenario:
    lines = _check_spec(spec)
    ss = np.random.SeedSequence(seed)
    r_arr, r_theta, r_pool = (np.random.default_rng(s) for s in ss.spawn(3))

    arrivals = tuple(poisson_times(p, spec.horizon, np.random.default_rng(r_arr.integers(2**63)))
                     for p in spec.rates)

    theta = {}
    for l in lines:
        v = spec.theta.get(l)
        theta[l] = float(r_theta.uniform(*spec.theta_range)) if v is None else float(v)

    services, pools = {}, {}
    for l in lines:
        m = spec.service_mean.get(l, spec.service_mean.get(l[1]))
        if m is None or not m > 0:
            raise InvalidSpec(f"no positive service mean for line {l}")
        d = (Distribution.exponential(m) if spec.service_kind == "exponential"
             else Distribution.lognormal(m, spec.service_cv))
        if spec.pool_size:
            if d.kind == "exponential":
                pool = r_pool.exponential(m, size=spec.pool_size)
            else:
                s2 = math.log1p(spec.service_cv ** 2)
                pool = r_pool.lognormal(math.log(m) - s2 / 2, math.sqrt(s2), size=spec.pool_size)
            pools[l] = pool
            d = Distribution.empirical(pool)
        services[l] = d

    caps, counts = [], []
    for j in range(spec.num_servers):
        a = spec.agents[j] if spec.agents else 1
        if isinstance(a, (int, np.integer)):
            caps.append(CapacitySchedule.constant(int(a)))
            counts.append(())
        else:
            c = tuple(int(x) for x in a)
            caps.append(hourly_schedule(c, spec.hour))
            counts.append(c)

    cfg = SystemConfig(spec.num_types, spec.num_servers, tuple(lines),
                       tuple(ArrivalSource.from_times(a) for a in arrivals), services, theta,
                       tuple(caps))
    problems = validate_config(cfg)
    if problems:
        raise InvalidSpec("; ".join(problems))
    return Scenario(cfg, float(spec.horizon), arrivals, {"synthetic": theta}, pools,
                    tuple(counts), tuple(range(spec.num_types)), tuple(range(spec.num_servers)),
                    name=spec.name)


# -- the 3x3 validation instance ------------------------------------------------

APPENDIX_D_LAMBDA = (3.0, 7.0, 5.0)
APPENDIX_D_MU = (1.0, 5.0, 10.0)
# Chosen so that the printed vertex is the unique optimum and so that server 3
# (index 2) prefers its own type over type 2 in the tree dispatch.
APPENDIX_D_THETA = {
    (0, 0): 0.9, (0, 1): 0.7, (0, 2): 0.2,
    (1, 0): 0.3, (1, 1): 0.8, (1, 2): 0.5,
    (2, 0): 0.3, (2, 1): 0.3, (2, 2): 0.6,
}


def appendix_d_spec(horizon: float = 500.0) -> SyntheticSpec:
    return SyntheticSpec(
        num_types=3, num_servers=3, rates=list(APPENDIX_D_LAMBDA),
        service_mean={j: 1.0 / m for j, m in enumerate(APPENDIX_D_MU)},
        theta=APPENDIX_D_THETA, horizon=horizon, name="appendix-d",
    )


def appendix_d_rates(epsilon: float = 0.01) -> dict[Line, float]:
    e = epsilon
    return {(0, 0): 1 - e, (0, 1): 2 + e, (1, 1): 3 - 6 * e, (1, 2): 4 + 6 * e, (2, 2): 5.0}


def appendix_d_config() -> SystemConfig:
    """The 3x3 system with Poisson renewal arrivals (fresh arrivals per seed)."""
    lines = tuple((i, j) for i in range(3) for j in range(3))
    return SystemConfig(
        3, 3, lines, tuple(ArrivalSource.poisson(l) for l in APPENDIX_D_LAMBDA),
        {l: Distribution.exponential(1.0 / APPENDIX_D_MU[l[1]]) for l in lines},
        dict(APPENDIX_D_THETA),
    )


# -- desk-scale synthetic instances ---------------------------------------------

def learning_spec(episodes: int = 2000, h: float = 10.0) -> SyntheticSpec:
    """Stationary 3x4 system with widely spread payoffs.

    Most lines pay 0 or 1 so that a policy that does not learn pays dearly;
    the preferred servers run at about 70% load.
    """
    theta = {(0, 0): 1.0, (0, 1): 0.55, (0, 2): 0.0, (0, 3): 0.3,
             (1, 0): 0.2, (1, 1): 1.0, (1, 3): 0.6,
             (2, 1): 0.0, (2, 2): 0.7, (2, 3): 1.0}
    return SyntheticSpec(3, 4, [0.6, 0.5, 0.5], {0: 1.1, 1: 1.4, 2: 2.0, 3: 1.4},
                         lines=sorted(theta), theta=theta, horizon=episodes * h, name="learning")


HOUR = 3600.0

# per-type arrival rates (per second) for each hour of the day
_DAY_SHAPE = (0.03, 0.02, 0.02, 0.02, 0.03, 0.05, 0.15, 0.35, 0.5, 0.5, 0.5, 0.5,
              0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.35, 0.25, 0.15, 0.08, 0.05, 0.04)
_DAY_WEIGHT = (1.0, 0.8, 0.7)
# agents per server for each hour; servers 2 and 3 are closed at night, and
# evening cuts lag the drop in demand by an hour
_DAY_AGENTS = (
    (4,) * 6 + (8, 12) + (12,) * 11 + (10, 8, 6) + (4,) * 2,
    (4,) * 6 + (8, 12) + (12,) * 11 + (10, 8, 6) + (4,) * 2,
    (0,) * 7 + (8,) + (10,) * 11 + (8, 6) + (0,) * 3,
    (0,) * 7 + (8,) + (10,) * 11 + (8, 6) + (0,) * 3,
)


def day_spec(scale: float = 1.0, name: str = "synthetic-day") -> SyntheticSpec:
    """A 24-hour day with a morning ramp, a flat office-hours plateau and an evening decline.

    ``scale`` multiplies every arrival rate. Two servers are unstaffed at
    night and open during the morning ramp, so their lines are still
    unexplored when traffic picks up.
    """
    theta = {(0, 0): 0.9, (0, 1): 0.6, (0, 3): 0.75,
             (1, 0): 0.5, (1, 1): 0.85, (1, 2): 0.95,
             (2, 1): 0.4, (2, 2): 0.7, (2, 3): 0.95}
    rates = [[(h * HOUR, scale * w * r) for h, r in enumerate(_DAY_SHAPE)] for w in _DAY_WEIGHT]
    return SyntheticSpec(3, 4, rates, {0: 30.0, 1: 30.0, 2: 30.0, 3: 30.0},
                         lines=sorted(theta), theta=theta, agents=_DAY_AGENTS,
                         horizon=24 * HOUR, name=name)


# payoffs of the fairness instance: the second-best lines are nearly as good as
# the best ones, so a small load-variance weight already moves traffic
FAIRNESS_THETA = {(0, 0): 0.9, (0, 1): 0.5, (0, 2): 0.895, (1, 1): 0.85, (1, 2): 0.845}


def fairness_spec(horizon: float = 4 * HOUR) -> SyntheticSpec:
    """Two types and three unit-rate servers; the payoff-optimal plan leaves server 2 idle."""
    return SyntheticSpec(2, 3, [0.8, 0.8], {0: 1.0, 1: 1.0, 2: 1.0}, lines=sorted(FAIRNESS_THETA),
                         theta=FAIRNESS_THETA, horizon=horizon, name="fairness")
