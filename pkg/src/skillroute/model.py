"""Static description of a skill-based queueing system.

Indices are zero-based throughout: customer types ``0..num_types-1`` and
servers ``0..num_servers-1``. A *line* is a compatible ``(type, server)``
pair. Time is in seconds and every rate is per second.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

Line = tuple[int, int]


@dataclass(frozen=True)
class Distribution:
    """A service-time or interarrival-time distribution.

    ``kind`` is one of ``exponential`` (params: ``mean``), ``lognormal``
    (params: ``mean``, ``cv``), ``deterministic`` (params: ``value``) or
    ``empirical`` (``samples`` holds the pool, drawn uniformly with
    replacement).
    """

    kind: str
    mean_value: float = math.nan
    cv: float = 1.0
    samples: tuple[float, ...] = ()

    @classmethod
    def exponential(cls, mean: float) -> "Distribution":
        return cls("exponential", float(mean))

    @classmethod
    def lognormal(cls, mean: float, cv: float) -> "Distribution":
        return cls("lognormal", float(mean), float(cv))

    @classmethod
    def deterministic(cls, value: float) -> "Distribution":
        return cls("deterministic", float(value))

    @classmethod
    def empirical(cls, samples: Sequence[float]) -> "Distribution":
        return cls("empirical", samples=tuple(float(s) for s in samples))

    def mean(self) -> float:
        if self.kind == "empirical":
            if not self.samples:
                return math.nan
            return math.fsum(self.samples) / len(self.samples)
        return self.mean_value


@dataclass(frozen=True)
class ArrivalSource:
    """Arrivals of one customer type: explicit timestamps or a renewal process."""

    timestamps: tuple[float, ...] | None = None
    interarrival: Distribution | None = None

    @classmethod
    def from_times(cls, times: Sequence[float]) -> "ArrivalSource":
        return cls(timestamps=tuple(sorted(float(t) for t in times)))

    @classmethod
    def poisson(cls, rate: float) -> "ArrivalSource":
        if rate <= 0:
            return cls(timestamps=())
        return cls(interarrival=Distribution.exponential(1.0 / rate))

    def mean_rate(self, start: float | None = None, end: float | None = None) -> float:
        """Long-run rate, or the empirical rate in ``[start, end)`` for timestamp lists."""
        if self.timestamps is not None:
            if start is None or end is None:
                if not self.timestamps:
                    return 0.0
                span = self.timestamps[-1] if start is None else end - start
                return len(self.timestamps) / span if span > 0 else 0.0
            n = sum(1 for t in self.timestamps if start <= t < end)
            return n / (end - start)
        if self.interarrival is None:
            return 0.0
        return 1.0 / self.interarrival.mean()


@dataclass(frozen=True)
class CapacitySchedule:
    """Piecewise-constant agent count: ``counts[k]`` holds from ``times[k]`` on."""

    times: tuple[float, ...] = (0.0,)
    counts: tuple[int, ...] = (1,)

    @classmethod
    def constant(cls, count: int = 1) -> "CapacitySchedule":
        return cls((0.0,), (int(count),))

    def count_at(self, t: float) -> int:
        c = 0
        for bt, bc in zip(self.times, self.counts):
            if bt <= t:
                c = bc
            else:
                break
        return c


@dataclass(frozen=True)
class SystemConfig:
    num_types: int
    num_servers: int
    lines: tuple[Line, ...]
    arrivals: tuple[ArrivalSource, ...]
    services: Mapping[Line, Distribution]
    payoff: Mapping[Line, float]
    capacity: tuple[CapacitySchedule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(tuple(l) for l in self.lines))
        if not self.capacity:
            object.__setattr__(
                self, "capacity",
                tuple(CapacitySchedule.constant(1) for _ in range(self.num_servers)),
            )

    def servers_of(self, i: int) -> list[int]:
        return [j for (ti, j) in self.lines if ti == i]

    def types_of(self, j: int) -> list[int]:
        return [i for (i, sj) in self.lines if sj == j]

    def line_index(self) -> dict[Line, int]:
        return {l: n for n, l in enumerate(self.lines)}


class PolicyKind(str, enum.Enum):
    UCBQR = "UCBQR"
    UCBQR_TREE = "UCBQR_TREE"
    ORACLE = "ORACLE"
    FCFS_ALIS = "FCFS_ALIS"
    GREEDY = "GREEDY"
    RANDOM = "RANDOM"
    THETA_MU = "THETA_MU"
    UCBQR_LAMBDA = "UCBQR_LAMBDA"
    UCBQR_MU = "UCBQR_MU"

    @property
    def episodic(self) -> bool:
        return self in EPISODIC_KINDS


EPISODIC_KINDS = frozenset({
    PolicyKind.UCBQR, PolicyKind.UCBQR_TREE, PolicyKind.ORACLE,
    PolicyKind.UCBQR_LAMBDA, PolicyKind.UCBQR_MU,
})


@dataclass(frozen=True)
class PolicySpec:
    """Routing policy under test.

    ``fixed_rates`` pins the routing plan (learning bypassed), which is how a
    given vertex solution is fed straight into a dispatch rule. ``tree`` swaps
    the virtual-queue dispatch for tree-based dispatch on any episodic kind;
    it is implied by ``UCBQR_TREE``.
    """

    kind: PolicyKind = PolicyKind.UCBQR
    episode_length: float = 120.0
    epsilon: float = 1e-6
    penalty: float = 1e3
    gamma: float = 0.0
    holt_alpha: float = 0.5
    holt_beta: float = 0.2
    mu_init: float = 1e-3
    tree: bool = False
    fixed_rates: Mapping[Line, float] | None = None
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.UCBQR_TREE:
            object.__setattr__(self, "tree", True)

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    def violations(self) -> list[str]:
        out = []
        if self.kind.episodic and not self.episode_length > 0:
            out.append("episode_length: must be > 0 for episodic policies")
        if not 0 < self.epsilon < 1:
            out.append("epsilon: must lie in (0, 1)")
        if not self.penalty > 0:
            out.append("penalty: must be > 0")
        if not self.gamma >= 0:
            out.append("gamma: must be >= 0")
        for nm in ("holt_alpha", "holt_beta"):
            v = getattr(self, nm)
            if not 0 <= v <= 1:
                out.append(f"{nm}: must lie in [0, 1]")
        if not self.mu_init > 0:
            out.append("mu_init: must be > 0")
        if self.tree and self.gamma > 0:
            out.append("gamma: tree dispatch needs a vertex plan, so gamma must be 0")
        return out


def validate_config(config: SystemConfig) -> list[str]:
    """Return a list of human-readable violations; empty means valid.

    Never raises: malformed input produces violations instead.
    """
    out: list[str] = []
    try:
        _collect_violations(config, out)
    except Exception as exc:  # noqa: BLE001
        out.append(f"config: malformed ({type(exc).__name__}: {exc})")
    return out


def _collect_violations(config, out: list[str]) -> None:
    try:
        I, J = int(config.num_types), int(config.num_servers)
    except Exception:  # noqa: BLE001
        out.append("num_types/num_servers: not integers")
        return
    if I < 1:
        out.append("num_types: must be a positive integer")
    if J < 1:
        out.append("num_servers: must be a positive integer")

    lines = []
    try:
        lines = list(config.lines)
    except Exception:  # noqa: BLE001
        out.append("lines: not iterable")
    seen = set()
    for l in lines:
        try:
            i, j = l
        except Exception:  # noqa: BLE001
            out.append(f"lines: malformed entry {l!r}")
            continue
        if not (isinstance(i, int) and 0 <= i < I and isinstance(j, int) and 0 <= j < J):
            out.append(f"lines: {l!r} references an invalid type/server index")
        if (i, j) in seen:
            out.append(f"lines: duplicate line {l!r}")
        seen.add((i, j))
    covered = {l[0] for l in seen if isinstance(l[0], int) and 0 <= l[0] < I}
    if len(covered) < max(I, 0):
        # list a few uncovered types without iterating over a huge range
        missing = []
        i = 0
        while len(missing) < 5 and i < I:
            if i not in covered:
                missing.append(i)
            i += 1
        for i in missing:
            out.append(f"lines: type {i} has no compatible server")
        if I - len(covered) > len(missing):
            out.append(f"lines: {I - len(covered)} types in total have no compatible server")

    try:
        arrivals = list(config.arrivals)
    except Exception:  # noqa: BLE001
        arrivals = []
    if len(arrivals) != I:
        out.append(f"arrivals: expected {I} sources, got {len(arrivals)}")
    for i, src in enumerate(arrivals):
        ts = getattr(src, "timestamps", None)
        ia = getattr(src, "interarrival", None)
        if ts is None and ia is None:
            out.append(f"arrivals: type {i} has neither timestamps nor interarrival")
        elif ts is not None and any(b < a for a, b in zip(ts, ts[1:])):
            out.append(f"arrivals: type {i} timestamps not sorted")

    payoff = getattr(config, "payoff", None) or {}
    services = getattr(config, "services", None) or {}
    for l in seen:
        th = payoff.get(l)
        if th is None:
            out.append(f"payoff: missing for line {l}")
        elif not (isinstance(th, (int, float)) and 0.0 <= th <= 1.0):
            out.append(f"payoff: theta{l} = {th!r} outside [0, 1]")
        d = services.get(l)
        if d is None:
            out.append(f"services: missing for line {l}")
        elif getattr(d, "kind", None) == "empirical" and not d.samples:
            out.append(f"services: empty empirical pool for line {l}")
    for l in payoff:
        if l not in seen:
            out.append(f"payoff: line {l} is not in the compatibility set")

    caps = list(getattr(config, "capacity", ()) or ())
    if len(caps) != J:
        out.append(f"capacity: expected {J} schedules, got {len(caps)}")
    for j, cs in enumerate(caps):
        times, counts = tuple(cs.times), tuple(cs.counts)
        if len(times) != len(counts) or not times:
            out.append(f"capacity: server {j} times/counts length mismatch")
            continue
        if any(b <= a for a, b in zip(times, times[1:])):
            out.append(f"capacity: server {j} breakpoints not strictly increasing")
        if any(not isinstance(c, int) or c < 0 for c in counts):
            out.append(f"capacity: server {j} agent counts must be nonnegative integers")


class ConfigInvalid(ValueError):
    pass


def check_config(config: SystemConfig) -> None:
    problems = validate_config(config)
    if problems:
        raise ConfigInvalid("; ".join(problems))


@dataclass
class RoutingPlan:
    """Routing rates over the compatibility lines.

    ``rates[n]`` is the rate on ``lines[n]``; ``rejection`` maps a type to the
    mass routed to the fictitious rejection server (empty when the plain
    program was feasible).
    """

    lines: tuple[Line, ...]
    rates: np.ndarray
    rejection: dict[int, float] = field(default_factory=dict)
    objective: float = 0.0
    is_vertex: bool = True

    def rate(self, line: Line) -> float:
        return float(self.rates[self.lines.index(line)])

    def as_dict(self) -> dict[Line, float]:
        return {l: float(x) for l, x in zip(self.lines, self.rates)}


@dataclass
class SpanningForest:
    parent_of_queue: dict[int, int | None]
    children_of_server: dict[int, list[int]]
    children_of_queue: dict[int, list[int]]
    parent_of_server: dict[int, int | None]
    roots: set[int]
    edges: set[Line]

    def queue_nodes(self) -> set[int]:
        return set(self.parent_of_queue)
