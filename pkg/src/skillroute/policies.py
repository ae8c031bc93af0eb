"""Routing policies.

Every policy reacts to three engine callbacks: ``on_arrival`` (a customer
needs a server or a queue), ``on_server_free`` (a server looks for work) and
the episode boundaries ``end_episode``/``begin_episode``. Static policies
keep customers in per-type queues; the episodic learning policies either
use per-server virtual queues refilled by routing probabilities or the
tree rule on per-type queues.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import lp
from .estimators import (HoltState, ServiceRateState, UcbState, forecast_to_rate,
                         holt_update_and_forecast, service_rate_update_totals,
                         ucb_update_counts)
from .model import PolicyKind, PolicySpec, RoutingPlan, SpanningForest, SystemConfig

log = logging.getLogger(__name__)


class MissingGroundTruth(ValueError):
    pass


def make_policy(spec: PolicySpec, sim) -> "Policy":
    if spec.kind in (PolicyKind.FCFS_ALIS, PolicyKind.GREEDY, PolicyKind.RANDOM,
                     PolicyKind.THETA_MU):
        return StaticPolicy(spec, sim)
    return EpisodicPolicy(spec, sim)


class Policy:
    def __init__(self, spec: PolicySpec, sim):
        self.spec = spec
        self.sim = sim

    def begin_episode(self, k: int) -> None:
        pass

    def end_episode(self, k: int) -> None:
        pass

    def on_arrival(self, cid: int, i: int) -> None:
        raise NotImplementedError

    def on_server_free(self, j: int) -> None:
        raise NotImplementedError

    def observe(self, n: int, work: float, payoff: float, duration: float) -> None:
        pass

    # shared by the static rules and the tree rule's fallback
    def _alis_server(self, servers) -> int | None:
        sim = self.sim
        best, best_t = None, math.inf
        for j in servers:
            if sim.busy[j] < 0 and sim.count[j] > 0 and sim.idle_since[j] < best_t:
                best, best_t = j, sim.idle_since[j]
        return best

    def _fcfs_queue(self, types) -> int | None:
        sim = self.sim
        best, best_key = None, None
        for i in types:
            q = sim.queues[i]
            if q:
                key = (sim.cust_arrival[q[0]], q[0])
                if best_key is None or key < best_key:
                    best, best_key = i, key
        return best


# ---------------------------------------------------------------------------
# ground truth for the oracle and the estimator-knowledge variants


def true_theta(config: SystemConfig) -> np.ndarray:
    return np.array([float(config.payoff[l]) for l in config.lines])


def true_mu_per_agent(config: SystemConfig) -> np.ndarray:
    out = []
    for l in config.lines:
        m = config.services[l].mean()
        if not m > 0:
            raise MissingGroundTruth(f"no mean service time for line {l}")
        out.append(1.0 / m)
    return np.array(out)


def true_lambda(config: SystemConfig, start: float, end: float) -> np.ndarray:
    """Arrival rates over ``[start, end)``: the empirical window rate for
    timestamp lists, the long-run rate for renewal sources."""
    out = []
    for i, src in enumerate(config.arrivals):
        if src.timestamps is not None:
            ts = src.timestamps
            n = bisect.bisect_left(ts, end) - bisect.bisect_left(ts, start)
            out.append(n / (end - start))
        elif src.interarrival is not None:
            m = src.interarrival.mean()
            if not m > 0:
                raise MissingGroundTruth(f"no interarrival mean for type {i}")
            out.append(1.0 / m)
        else:
            raise MissingGroundTruth(f"no arrival process for type {i}")
    return np.array(out)


@dataclass(frozen=True)
class GroundTruthUse:
    theta: bool = False
    lam: bool = False
    mu: bool = False


def ground_truth_use(kind: PolicyKind) -> GroundTruthUse:
    return {
        PolicyKind.ORACLE: GroundTruthUse(True, True, True),
        PolicyKind.UCBQR_MU: GroundTruthUse(mu=True),
        PolicyKind.UCBQR_LAMBDA: GroundTruthUse(lam=True),
    }.get(kind, GroundTruthUse())


def make_oracle(config: SystemConfig, kind: PolicyKind = PolicyKind.ORACLE) -> dict:
    """Resolve the true parameters a policy kind is allowed to see.

    Raises :class:`MissingGroundTruth` when the configuration cannot supply
    one of them.
    """
    use = ground_truth_use(kind)
    out = {"use": use}
    if use.theta:
        out["theta"] = true_theta(config)
    if use.mu:
        out["mu_per_agent"] = true_mu_per_agent(config)
    if use.lam:
        true_lambda(config, 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# static benchmarks


class StaticPolicy(Policy):
    """FCFS-ALIS, Greedy, Random and the theta-mu rule."""

    def __init__(self, spec, sim):
        super().__init__(spec, sim)
        cfg = sim.config
        self.kind = spec.kind
        self.theta = {l: float(cfg.payoff[l]) for l in cfg.lines}
        if self.kind is PolicyKind.THETA_MU:
            mu = true_mu_per_agent(cfg)
            self.mu = {l: float(m) for l, m in zip(cfg.lines, mu)}

    def _score(self, i: int, j: int) -> float:
        if self.kind is PolicyKind.GREEDY:
            return self.theta[(i, j)]
        return self.theta[(i, j)] * self.mu[(i, j)] * self.sim.count[j]

    def choose_server(self, i: int) -> int | None:
        sim = self.sim
        if self.kind is PolicyKind.FCFS_ALIS:
            return self._alis_server(sim.servers_of[i])
        idle = [j for j in sim.servers_of[i] if sim.busy[j] < 0 and sim.count[j] > 0]
        if not idle:
            return None
        if self.kind is PolicyKind.RANDOM:
            return idle[sim.policy_stream.below(len(idle))]
        return max(idle, key=lambda j: (self._score(i, j), -j))

    def choose_type(self, j: int) -> int | None:
        sim = self.sim
        if self.kind is PolicyKind.FCFS_ALIS:
            return self._fcfs_queue(sim.types_of[j])
        cands = [i for i in sim.types_of[j] if sim.queues[i]]
        if not cands:
            return None
        if self.kind is PolicyKind.RANDOM:
            return cands[sim.policy_stream.below(len(cands))]
        return max(cands, key=lambda i: (self._score(i, j), -i))

    def on_arrival(self, cid, i):
        j = self.choose_server(i)
        if j is None:
            self.sim.queues[i].append(cid)
        else:
            self.sim.start_service(cid, j)

    def on_server_free(self, j):
        i = self.choose_type(j)
        if i is not None:
            self.sim.start_service(self.sim.queues[i].popleft(), j)


def dispatch_static(kind: PolicyKind, sim, *, arriving_type: int | None = None,
                    free_server: int | None = None) -> int | None:
    """Decision of a static rule without side effects: the server for an
    arriving type, or the type whose head-of-line customer a free server
    takes."""
    pol = StaticPolicy(PolicySpec(kind=kind), sim)
    if arriving_type is not None:
        return pol.choose_server(arriving_type)
    return pol.choose_type(free_server)


# ---------------------------------------------------------------------------
# episodic learning policies


def routing_probabilities(plan: RoutingPlan, num_types: int) -> list[dict[int, float]]:
    """Normalise line rates per type; the rejection server is left out."""
    probs: list[dict[int, float]] = [{} for _ in range(num_types)]
    tot = np.zeros(num_types)
    for (i, j), x in zip(plan.lines, plan.rates):
        if x > 0:
            tot[i] += x
    for (i, j), x in zip(plan.lines, plan.rates):
        if x > 0 and tot[i] > 0:
            p = float(x / tot[i])
            if p > 0:  # denormal rates can underflow
                probs[i][j] = p
    return probs


class EpisodicPolicy(Policy):
    """Episodic LP routing: UCB-QR, its tree variant, the oracle and the
    estimator-knowledge variants.

    Observations made during an episode are folded into the estimators at
    the next episode boundary only.
    """

    def __init__(self, spec, sim):
        super().__init__(spec, sim)
        cfg = sim.config
        L, I = len(cfg.lines), cfg.num_types
        # a pinned plan comes from the true system, so orient its forest with true rates
        self.truth = make_oracle(cfg, PolicyKind.ORACLE if spec.fixed_rates is not None else spec.kind)
        self.use: GroundTruthUse = self.truth["use"]
        self.ucb = UcbState.initial(L)
        self.holt = HoltState.initial(I)
        self.service = ServiceRateState.initial(L, spec.mu_init)
        self.tree = spec.tree
        self._reset_counters()
        self.plan: RoutingPlan | None = None
        self.probs: list[dict[int, float]] = [{} for _ in range(I)]
        self._cum: list[tuple[list[int], list[float]]] = [([], []) for _ in range(I)]
        self.forest: SpanningForest | None = None
        self.theta_dispatch = np.full(L, np.inf)
        self.in_forest: set[int] = set()
        self._fixed = None
        if spec.fixed_rates is not None:
            self._fixed = np.array([float(spec.fixed_rates.get(l, 0.0)) for l in cfg.lines])

    def _reset_counters(self):
        cfg = self.sim.config
        L, I = len(cfg.lines), cfg.num_types
        self.ep_arrivals = np.zeros(I)
        self.ep_pulls = np.zeros(L, dtype=np.int64)
        self.ep_succ = np.zeros(L, dtype=np.int64)
        self.ep_work = np.zeros(L)

    # -- observation ---------------------------------------------------------

    def observe(self, n, work, payoff, duration):
        self.ep_pulls[n] += 1
        self.ep_succ[n] += int(payoff)
        self.ep_work[n] += work

    # -- episode boundaries --------------------------------------------------

    def end_episode(self, k):
        spec = self.spec
        self.ucb = ucb_update_counts(self.ucb, k, self.ep_pulls, self.ep_succ)
        self.holt, _ = holt_update_and_forecast(self.holt, self.ep_arrivals,
                                                spec.holt_alpha, spec.holt_beta)
        self.service = service_rate_update_totals(self.service, self.ep_pulls, self.ep_work)
        self._reset_counters()

    def current_problem(self, k: int) -> tuple[lp.LpProblem, np.ndarray]:
        sim, spec, cfg = self.sim, self.spec, self.sim.config
        h = spec.episode_length
        if self.use.lam:
            lam = true_lambda(cfg, (k - 1) * h, k * h)
        else:
            lam = forecast_to_rate(self.holt.forecast, h)
        theta = self.truth["theta"] if self.use.theta else self.ucb.ucb
        per_agent = self.truth["mu_per_agent"] if self.use.mu else self.service.estimate
        counts = np.array([sim.count[j] for (_, j) in cfg.lines], dtype=float)
        keep = np.nonzero(counts > 0)[0]
        lines = [cfg.lines[n] for n in keep]
        problem = lp.LpProblem(lines, cfg.num_servers, lam, per_agent[keep] * counts[keep],
                               theta[keep], spec.epsilon, spec.penalty, spec.gamma)
        return problem, keep

    def solve(self, problem: lp.LpProblem) -> RoutingPlan:
        if self.spec.gamma > 0:
            try:
                return lp.solve_fairness(problem)
            except lp.InfeasibleRegion:
                return lp.solve_fairness(problem, with_rejection=True)
        return lp.solve_routing(problem)

    def begin_episode(self, k):
        sim, cfg = self.sim, self.sim.config
        try:
            problem, keep = self.current_problem(k)
            if self._fixed is not None:
                x = self._fixed[keep]
                plan = RoutingPlan(problem.lines, x, {}, float(problem.capped_theta() @ x), True)
            else:
                plan = self.solve(problem)
        except (lp.NumericalFailure, lp.InfeasibleRegion) as exc:
            from .engine import PolicyFailure
            raise PolicyFailure(f"episode {k}: {exc}") from exc
        full = np.zeros(len(cfg.lines))
        full[keep] = plan.rates
        self.plan = RoutingPlan(cfg.lines, full, plan.rejection, plan.objective, plan.is_vertex)
        self.probs = routing_probabilities(self.plan, cfg.num_types)
        self._cum = []
        for i in range(cfg.num_types):
            js = sorted(self.probs[i])
            acc, cum = 0.0, []
            for j in js:
                acc += self.probs[i][j]
                cum.append(acc)
            self._cum.append((js, cum))
        theta = self.truth["theta"] if self.use.theta else self.ucb.ucb
        self.theta_dispatch = {l: float(t) for l, t in zip(cfg.lines, theta)}

        forest_edges = None
        if self.tree:
            self.forest = None
            try:
                self.forest = lp.extract_spanning_forest(plan, problem)
                forest_edges = sorted(self.forest.edges)
            except (lp.CyclicSupport, lp.NotAVertex) as exc:
                log.warning("episode %d: %s; using FCFS-ALIS this episode", k, exc)
            self.in_forest = set(self.forest.parent_of_queue) if self.forest else set()
        sim.snapshot({
            "episode": k, "time": sim.now,
            "lam": problem.lam.tolist(),
            "theta_hat": [float(t) for t in theta],
            "mu_hat": (self.truth["mu_per_agent"] if self.use.mu else self.service.estimate).tolist(),
            "rates": full.tolist(),
            "rejection": {int(i): float(r) for i, r in plan.rejection.items()},
            "forest": forest_edges,
        })
        if self.tree:
            for j in range(cfg.num_servers):
                if sim.is_available(j):
                    self.on_server_free(j)
        else:
            self._reshuffle()

    # -- virtual-queue dispatch ---------------------------------------------

    def _draw_server(self, i: int) -> int:
        sim = self.sim
        js, cum = self._cum[i]
        if js:
            u = sim.policy_stream.random() * cum[-1]
            return js[min(bisect.bisect_right(cum, u), len(js) - 1)]
        comp = [j for j in sim.servers_of[i] if sim.count[j] > 0] or sim.servers_of[i]
        return comp[sim.policy_stream.below(len(comp))]

    def _reshuffle(self):
        sim = self.sim
        waiting = sorted(c for q in sim.vqueues for c in q)
        for q in sim.vqueues:
            q.clear()
        for c in waiting:
            sim.vqueues[self._draw_server(sim.cust_type[c])].append(c)
        # customer ids grow with arrival time, so sorting by id orders by arrival
        for j, q in enumerate(sim.vqueues):
            if q and sim.is_available(j):
                sim.start_service(q.popleft(), j)

    # -- dispatch entry points ----------------------------------------------

    def on_arrival(self, cid, i):
        self.ep_arrivals[i] += 1
        if self.tree:
            self._tree_arrival(cid, i)
            return
        sim = self.sim
        j = self._draw_server(i)
        q = sim.vqueues[j]
        if not q and sim.is_available(j):
            sim.start_service(cid, j)
        else:
            q.append(cid)

    def on_server_free(self, j):
        if self.tree:
            self._tree_free(j)
            return
        q = self.sim.vqueues[j]
        if q:
            self.sim.start_service(q.popleft(), j)

    # -- tree dispatch --------------------------------------------------------

    def _tree_arrival(self, cid, i):
        sim, f = self.sim, self.forest
        if f is None or i not in self.in_forest:
            j = self._alis_server(sim.servers_of[i])
            if j is None:
                sim.queues[i].append(cid)
            else:
                sim.start_service(cid, j)
            return
        th = self.theta_dispatch
        best, best_th = None, -math.inf
        for j in f.children_of_queue.get(i, ()):
            if sim.busy[j] < 0 and sim.count[j] > 0:
                t = th[(i, j)]
                if t > best_th or (t == best_th and j < best):
                    best, best_th = j, t
        if best is None:
            p = f.parent_of_queue.get(i)
            if p is not None and sim.busy[p] < 0 and sim.count[p] > 0:
                best = p
        if best is None:
            sim.queues[i].append(cid)
        else:
            sim.start_service(cid, best)

    def _tree_free(self, j):
        sim, f = self.sim, self.forest
        if f is not None:
            th = self.theta_dispatch
            best, best_th = None, -math.inf
            for i in f.children_of_server.get(j, ()):
                if sim.queues[i]:
                    t = th[(i, j)]
                    if t > best_th or (t == best_th and i < best):
                        best, best_th = i, t
            if best is None:
                p = f.parent_of_server.get(j)
                if p is not None and sim.queues[p]:
                    best = p
            if best is not None:
                sim.start_service(sim.queues[best].popleft(), j)
                return
        others = [i for i in sim.types_of[j] if i not in self.in_forest]
        i = self._fcfs_queue(others)
        if i is not None:
            sim.start_service(sim.queues[i].popleft(), j)
