"""Discrete-event simulation of a skill-based queueing system.

Events are processed in ``(time, sequence)`` order. Randomness comes from one
root seed split into named streams (arrivals per type, service per line,
payoffs per line, policy) so that two policies run on the same seed see the
same arrival process.
"""
from __future__ import annotations

import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import (ConfigInvalid, Distribution, Line, PolicySpec, SystemConfig,
                    validate_config)

# event kinds in the heap
_ARR, _DEP, _SCHED, _EPIS = 0, 1, 2, 3

# record kinds in the log
ARRIVAL, START, DEPARTURE, SCHEDULE_UPDATE, EPISODE_END = range(5)
KIND_NAMES = ("ARRIVAL", "START", "DEPARTURE", "SCHEDULE_UPDATE", "EPISODE_END")

_STREAM_ARRIVAL, _STREAM_SERVICE, _STREAM_PAYOFF, _STREAM_POLICY = range(4)


class PolicyFailure(RuntimeError):
    pass


class EmptyPool(ValueError):
    pass


class Stream:
    """Buffered uniform draws from one child of the root seed."""

    __slots__ = ("_rng", "_buf", "_pos", "_block", "_nbuf", "_npos")

    def __init__(self, seed: int, *key: int, block: int = 512):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
        self._rng = np.random.default_rng(ss)
        self._block = block
        self._buf: list[float] = []
        self._pos = 0
        self._nbuf: list[float] = []
        self._npos = 0

    def random(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def normal(self) -> float:
        if self._npos >= len(self._nbuf):
            self._nbuf = self._rng.standard_normal(self._block).tolist()
            self._npos = 0
        z = self._nbuf[self._npos]
        self._npos += 1
        return z

    def exponential(self, mean: float) -> float:
        return -mean * math.log1p(-self.random())

    def below(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)


def draw(dist: Distribution, stream: Stream) -> float:
    kind = dist.kind
    if kind == "exponential":
        return stream.exponential(dist.mean_value)
    if kind == "empirical":
        pool = dist.samples
        if not pool:
            raise EmptyPool("empirical pool has no samples")
        return pool[stream.below(len(pool))]
    if kind == "lognormal":
        s2 = math.log1p(dist.cv * dist.cv)
        return math.exp(math.log(dist.mean_value) - 0.5 * s2 + math.sqrt(s2) * stream.normal())
    if kind == "deterministic":
        return dist.mean_value
    raise ValueError(f"unknown distribution kind {kind!r}")


def sample_service_duration(dist: Distribution, server_count: int, stream: Stream) -> float:
    """Wall-clock duration of one service when ``server_count`` agents share the work."""
    if server_count < 1:
        raise ValueError("server_count must be at least 1")
    return draw(dist, stream) / server_count


@dataclass
class EventLog:
    """Everything that happened in one replication.

    ``records`` holds ``(time, seq, kind, type, server, customer, value)``
    tuples; ``value`` is the payoff draw for departures, the new agent count
    for schedule updates and the episode index for episode ends (``-1``
    otherwise). ``snapshots`` carries per-episode estimator and plan state.
    """

    num_types: int
    num_servers: int
    lines: tuple[Line, ...]
    horizon: float
    seed: int
    policy: str
    records: list[tuple] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None
    _arrays: dict | None = field(default=None, repr=False, compare=False)

    HEADER = "time\tseq\tkind\ttype\tserver\tcustomer\tvalue"

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# horizon={self.horizon!r} seed={self.seed} policy={self.policy}"
                  f" types={self.num_types} servers={self.num_servers}"
                  f" aborted={int(self.aborted)}\n")
        buf.write(self.HEADER + "\n")
        for t, s, k, i, j, c, v in self.records:
            buf.write(f"{t!r}\t{s}\t{KIND_NAMES[k]}\t{i}\t{j}\t{c}\t{v!r}\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str, lines: tuple[Line, ...] = ()) -> "EventLog":
        it = iter(text.splitlines())
        meta = dict(kv.split("=", 1) for kv in next(it)[2:].split())
        next(it)
        kinds = {n: k for k, n in enumerate(KIND_NAMES)}
        recs = []
        for row in it:
            t, s, k, i, j, c, v = row.split("\t")
            recs.append((float(t), int(s), kinds[k], int(i), int(j), int(c), float(v)))
        return cls(int(meta["types"]), int(meta["servers"]), tuple(lines), float(meta["horizon"]),
                   int(meta["seed"]), meta["policy"], recs, aborted=meta["aborted"] == "1")

    def arrays(self) -> dict[str, np.ndarray]:
        """Columnar view of the records, cached."""
        if self._arrays is None:
            m = np.array(self.records, dtype=float).reshape(-1, 7)
            ints = m[:, 1:6].astype(np.int64)
            self._arrays = {
                "time": m[:, 0], "seq": ints[:, 0], "kind": ints[:, 1], "type": ints[:, 2],
                "server": ints[:, 3], "customer": ints[:, 4], "value": m[:, 6],
            }
        return self._arrays


class Simulation:
    """One replication. Build, then call :meth:`run`.

    The routing policy reads and mutates the public queue structures:
    ``queues[i]`` (per-type FIFO of customer ids) and ``vqueues[j]``
    (per-server virtual FIFO).
    """

    def __init__(self, config: SystemConfig, policy: PolicySpec, seed: int, horizon: float,
                 record: bool = True, check_invariants: bool = False):
        problems = validate_config(config) + policy.violations()
        if problems:
            raise ConfigInvalid("; ".join(problems))
        if not horizon > 0:
            raise ConfigInvalid("horizon must be positive")
        self.config = config
        self.spec = policy
        self.seed = int(seed)
        self.horizon = float(horizon)
        self.check_invariants = check_invariants
        I, J = config.num_types, config.num_servers
        self.lines = config.lines
        self.line_of: dict[Line, int] = config.line_index()
        self.servers_of = [config.servers_of(i) for i in range(I)]
        self.types_of = [config.types_of(j) for j in range(J)]
        self.theta = [float(config.payoff[l]) for l in self.lines]
        self.service_dist = [config.services[l] for l in self.lines]

        self.arrival_streams = [Stream(self.seed, _STREAM_ARRIVAL, i) for i in range(I)]
        self.service_streams = [Stream(self.seed, _STREAM_SERVICE, n) for n in range(len(self.lines))]
        self.payoff_streams = [Stream(self.seed, _STREAM_PAYOFF, n) for n in range(len(self.lines))]
        self.policy_stream = Stream(self.seed, _STREAM_POLICY)

        self.now = 0.0
        self._heap: list[tuple] = []
        self._seq = 0
        self.count = [0] * J
        self.speed = [0] * J
        self.busy = [-1] * J
        self.idle_since = [0.0] * J
        self.svc_start = [0.0] * J
        self.svc_work = [0.0] * J
        self.svc_line = [-1] * J
        self._dep_time = [math.inf] * J
        self._dep_token = [0] * J
        self.cust_type: list[int] = []
        self.cust_arrival: list[float] = []
        self.queues: list[deque] = [deque() for _ in range(I)]
        self.vqueues: list[deque] = [deque() for _ in range(J)]
        self._arr_ptr = [0] * I
        self.n_arrived = 0
        self.n_departed = 0
        self.episode = 0

        self.log = EventLog(I, J, self.lines, self.horizon, self.seed, policy.label)
        self._record = record
        self._logseq = 0

        from .policies import make_policy
        self.policy = make_policy(policy, self)

    # -- bookkeeping -------------------------------------------------------

    def _push(self, t: float, kind: int, a: int, b: int = 0) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, a, b))
        self._seq += 1

    def emit(self, kind: int, i: int = -1, j: int = -1, c: int = -1, v: float = -1.0) -> None:
        if self._record:
            self.log.records.append((self.now, self._logseq, kind, i, j, c, v))
        self._logseq += 1

    def snapshot(self, data: dict) -> None:
        if self._record:
            self.log.snapshots.append(data)

    def is_available(self, j: int) -> bool:
        return self.busy[j] < 0 and self.count[j] > 0

    def n_waiting(self) -> int:
        return sum(map(len, self.queues)) + sum(map(len, self.vqueues))

    def n_in_service(self) -> int:
        return sum(1 for b in self.busy if b >= 0)

    # -- actions available to policies -------------------------------------

    def start_service(self, cid: int, j: int) -> None:
        if self.busy[j] >= 0:
            raise RuntimeError(f"server {j} already busy")
        i = self.cust_type[cid]
        n = self.line_of.get((i, j))
        if n is None:
            raise RuntimeError(f"customer type {i} is not compatible with server {j}")
        c = self.count[j]
        if c < 1:
            raise RuntimeError(f"server {j} has no active agents")
        work = draw(self.service_dist[n], self.service_streams[n])
        self.busy[j] = cid
        self.speed[j] = c
        self.svc_start[j] = self.now
        self.svc_work[j] = work
        self.svc_line[j] = n
        t = self.now + work / c
        self._dep_time[j] = t
        self._dep_token[j] += 1
        self._push(t, _DEP, j, self._dep_token[j])
        self.emit(START, i, j, cid)

    # -- main loop ----------------------------------------------------------

    def _next_arrival(self, i: int, after: float) -> None:
        src = self.config.arrivals[i]
        if src.timestamps is not None:
            p = self._arr_ptr[i]
            if p < len(src.timestamps):
                self._arr_ptr[i] = p + 1
                self._push(src.timestamps[p], _ARR, i)
        elif src.interarrival is not None:
            self._push(after + draw(src.interarrival, self.arrival_streams[i]), _ARR, i)

    def run(self) -> EventLog:
        cfg = self.config
        for j, cs in enumerate(cfg.capacity):
            self.count[j] = cs.count_at(0.0)
            for t, c in zip(cs.times, cs.counts):
                if t > 0.0:
                    self._push(float(t), _SCHED, j, int(c))
        for i in range(cfg.num_types):
            self._next_arrival(i, 0.0)
        h = self.spec.episode_length if self.spec.kind.episodic else 0.0
        try:
            if h > 0:
                self._push(h, _EPIS, 1)
            self.episode = 1
            self.policy.begin_episode(1)
            self._loop()
        except PolicyFailure as exc:
            self.log.aborted = True
            self.log.error = str(exc)
        return self.log

    def _loop(self) -> None:
        heap = self._heap
        horizon = self.horizon
        pop = heapq.heappop
        policy = self.policy
        on_arrival = policy.on_arrival
        on_free = policy.on_server_free
        observe = policy.observe
        emit = self.emit
        theta = self.theta
        pstreams = self.payoff_streams
        check = self.check_invariants
        while heap:
            t, _, kind, a, b = pop(heap)
            if t >= horizon:
                break
            self.now = t
            if kind == _ARR:
                cid = self.n_arrived
                self.n_arrived += 1
                self.cust_type.append(a)
                self.cust_arrival.append(t)
                emit(ARRIVAL, a, -1, cid)
                self._next_arrival(a, t)
                on_arrival(cid, a)
            elif kind == _DEP:
                j = a
                if b != self._dep_token[j] or self.busy[j] < 0:
                    continue  # superseded by a rescale
                cid = self.busy[j]
                n = self.svc_line[j]
                i = self.cust_type[cid]
                y = 1.0 if pstreams[n].random() < theta[n] else 0.0
                self.busy[j] = -1
                self.idle_since[j] = t
                self._dep_time[j] = math.inf
                self.n_departed += 1
                emit(DEPARTURE, i, j, cid, y)
                observe(n, self.svc_work[j], y, t - self.svc_start[j])
                if self.count[j] > 0:
                    on_free(j)
            elif kind == _SCHED:
                self.apply_schedule_update(a, b)
            else:
                emit(EPISODE_END, -1, -1, -1, float(a))
                policy.end_episode(a)
                self.episode = a + 1
                self._push(t + self.spec.episode_length, _EPIS, a + 1)
                policy.begin_episode(a + 1)
            if check:
                self._check()
        self.now = horizon

    def apply_schedule_update(self, j: int, new: int) -> None:
        """Change the agent count of server ``j`` at the current time.

        A running service keeps its remaining work; its wall-clock remainder
        is rescaled by ``old/new``. With ``new == 0`` it finishes on schedule
        and the server then goes inactive.
        """
        old = self.count[j]
        self.count[j] = new
        self.emit(SCHEDULE_UPDATE, -1, j, -1, float(new))
        if self.busy[j] >= 0:
            if new > 0 and new != self.speed[j]:
                remaining = self._dep_time[j] - self.now
                t = self.now + remaining * self.speed[j] / new
                self.speed[j] = new
                self._dep_time[j] = t
                self._dep_token[j] += 1
                self._push(t, _DEP, j, self._dep_token[j])
        elif new > 0:
            if old == 0:
                self.idle_since[j] = self.now
            self.policy.on_server_free(j)

    def remaining_service(self, j: int) -> float:
        return self._dep_time[j] - self.now if self.busy[j] >= 0 else 0.0

    def status(self, j: int) -> str:
        if self.busy[j] >= 0:
            return "BUSY"
        return "IDLE" if self.count[j] > 0 else "INACTIVE"

    def _check(self) -> None:
        waiting = self.n_waiting()
        in_service = self.n_in_service()
        if self.n_arrived != self.n_departed + waiting + in_service:
            raise AssertionError(
                f"conservation violated at t={self.now}: {self.n_arrived} arrived, "
                f"{self.n_departed} departed, {waiting} waiting, {in_service} in service")


def run_replication(config: SystemConfig, policy: PolicySpec, seed: int, horizon: float,
                    check_invariants: bool = False) -> EventLog:
    return Simulation(config, policy, seed, horizon, check_invariants=check_invariants).run()
