"""Routing-rate optimisation over the compatibility graph.

The feasible set is always the transport polytope

    sum_j x_ij (+ x_iz) = lam_i          for every type i with lam_i > 0
    sum_i x_ij / mu_ij <= 1 - eps        for every server j
    x >= 0

solved with a dense-tableau simplex (Bland's rule) so that the linear
programs return vertices. Concave objectives go through pairwise
Frank-Wolfe with the same simplex as linear-minimisation oracle.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .model import Line, RoutingPlan, SpanningForest

THETA_CAP = 2.0
FW_MAX_ITER = 500
FW_REL_GAP = 1e-6
EDGE_REL_THRESHOLD = 1e-9
_PIVOT_TOL = 1e-11
_FEAS_TOL = 1e-9


class NumericalFailure(RuntimeError):
    pass


class InfeasibleRegion(ValueError):
    pass


class NotAVertex(ValueError):
    pass


class CyclicSupport(ValueError):
    pass


class ObjectiveKind(str, enum.Enum):
    LINEAR = "LINEAR"
    FAIRNESS_QUADRATIC = "FAIRNESS_QUADRATIC"
    PLUGGABLE_PENALTY = "PLUGGABLE_PENALTY"


@dataclass
class LpProblem:
    """Inputs of one routing solve.

    ``lam`` is indexed by type, ``mu`` and ``theta`` by position in ``lines``.
    ``theta`` may contain ``inf`` for unexplored lines; those are replaced by
    ``THETA_CAP`` before solving.
    """

    lines: Sequence[Line]
    num_servers: int
    lam: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    epsilon: float = 1e-6
    penalty: float = 1e3
    gamma: float = 0.0
    objective_kind: ObjectiveKind = ObjectiveKind.LINEAR

    def __post_init__(self):
        self.lines = tuple(tuple(l) for l in self.lines)
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if len(self.mu) != len(self.lines) or len(self.theta) != len(self.lines):
            raise ValueError("mu and theta must have one entry per line")
        if np.any(~(self.mu > 0)):
            raise ValueError("mu must be strictly positive on every line")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def num_types(self) -> int:
        return len(self.lam)

    def capped_theta(self) -> np.ndarray:
        th = self.theta.copy()
        th[np.isposinf(th)] = THETA_CAP
        return th

    def load_matrix(self) -> np.ndarray:
        """``B`` with ``(B @ x)[j]`` the load of server ``j``."""
        B = np.zeros((self.num_servers, len(self.lines)))
        for n, (i, j) in enumerate(self.lines):
            B[j, n] = 1.0 / self.mu[n]
        return B

    def loads(self, x: np.ndarray) -> np.ndarray:
        return self.load_matrix() @ x


# ---------------------------------------------------------------------------
# simplex core


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    nz = np.nonzero(col)[0]
    if len(nz):
        T[nz] -= np.outer(col[nz], T[r])


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> None:
    """Maximise in place. Last row of ``T`` holds reduced costs ``c_j - z_j``
    (entering candidates have positive entries) and the objective value with
    flipped sign in the last column. ``allowed`` masks columns that may enter.
    """
    m = T.shape[0] - 1
    for _ in range(max_iter):
        red = T[-1, :-1]
        cand = np.nonzero((red > _PIVOT_TOL) & allowed)[0]
        if len(cand) == 0:
            return
        c = int(cand[0])  # Bland: lowest index
        colv = T[:m, c]
        pos = colv > _PIVOT_TOL
        if not pos.any():
            raise NumericalFailure("unbounded direction in a bounded polytope")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))[0]
        r = int(min(ties, key=lambda k: basis[k]))  # Bland: lowest basic index
        _pivot(T, r, c)
        basis[r] = c
    raise NumericalFailure(f"simplex exceeded {max_iter} iterations")


@dataclass
class _Polytope:
    """Standard-form data for the routing polytope.

    Column layout: line variables (active types only), optional rejection
    variables (one per active type), server slacks, then phase-one
    artificials.
    """

    problem: LpProblem
    with_rejection: bool
    active: np.ndarray = field(init=False)      # line positions kept
    types: list[int] = field(init=False)        # types with lam > 0
    A: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)
    n_lines: int = field(init=False)
    n_rej: int = field(init=False)

    def __post_init__(self):
        p = self.problem
        self.types = [i for i in range(p.num_types) if p.lam[i] > 0]
        tpos = {i: r for r, i in enumerate(self.types)}
        self.active = np.array([n for n, (i, _) in enumerate(p.lines) if i in tpos], dtype=int)
        I, J = len(self.types), p.num_servers
        self.n_lines = len(self.active)
        self.n_rej = I if self.with_rejection else 0
        nvar = self.n_lines + self.n_rej + J
        A = np.zeros((I + J, nvar))
        for c, n in enumerate(self.active):
            i, j = p.lines[n]
            A[tpos[i], c] = 1.0
            A[I + j, c] = 1.0 / p.mu[n]
        for r in range(self.n_rej):
            A[r, self.n_lines + r] = 1.0
        for j in range(J):
            A[I + j, self.n_lines + self.n_rej + j] = 1.0
        self.A = A
        self.b = np.concatenate([p.lam[self.types], np.full(J, 1.0 - p.epsilon)])

    @property
    def nvar(self) -> int:
        return self.A.shape[1]

    def cost(self, line_obj: np.ndarray) -> np.ndarray:
        """Full cost vector given an objective over *all* lines."""
        c = np.zeros(self.nvar)
        c[: self.n_lines] = line_obj[self.active]
        c[self.n_lines: self.n_lines + self.n_rej] = -self.problem.penalty
        return c

    def solve(self, line_obj: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        """Maximise ``line_obj . x`` (minus rejection penalty). Returns the
        full line-rate vector and rejection vector, or ``None`` if empty."""
        p = self.problem
        I = len(self.types)
        m, n = self.A.shape
        cap = 50 * (n + m)
        if self.with_rejection:
            # rejection columns and slacks form an identity basis
            basis = list(range(self.n_lines, self.n_lines + self.n_rej)) + \
                list(range(self.n_lines + self.n_rej, n))
            T = np.zeros((m + 1, n + 1))
            T[:m, :n] = self.A
            T[:m, -1] = self.b
            T[-1, :n] = self.cost(line_obj)
            for r, bc in enumerate(basis):
                T[-1] -= T[-1, bc] * T[r]
            _simplex(T, basis, np.ones(n, bool), cap)
            return self._extract(T, basis, n)

        # phase one: artificials on the type rows
        T = np.zeros((m + 1, n + I + 1))
        T[:m, :n] = self.A
        T[:I, n:n + I] = np.eye(I)
        T[:m, -1] = self.b
        basis = list(range(n, n + I)) + list(range(self.n_lines + self.n_rej, n))
        T[-1, n:n + I] = -1.0
        for r in range(I):
            T[-1] += T[r]
        T[-1, n:n + I] = 0.0
        _simplex(T, basis, np.ones(n + I, bool), cap)
        if T[-1, -1] > _FEAS_TOL * max(1.0, float(self.b.sum())):
            return None
        # drive degenerate artificials out of the basis
        for r in range(m):
            if basis[r] >= n:
                row = T[r, :n]
                nz = np.nonzero(np.abs(row) > _PIVOT_TOL)[0]
                if len(nz):
                    _pivot(T, r, int(nz[0]))
                    basis[r] = int(nz[0])
        allowed = np.zeros(n + I, bool)
        allowed[:n] = True
        T[-1] = 0.0
        T[-1, :n] = self.cost(line_obj)
        for r, bc in enumerate(basis):
            if T[-1, bc] != 0.0:
                T[-1] -= T[-1, bc] * T[r]
        _simplex(T, basis, allowed, cap)
        return self._extract(T, basis, n)

    def _extract(self, T, basis, n):
        z = np.zeros(T.shape[1] - 1)
        for r, bc in enumerate(basis):
            z[bc] = T[r, -1]
        z = np.maximum(z, 0.0)
        x = np.zeros(len(self.problem.lines))
        x[self.active] = z[: self.n_lines]
        rej = z[self.n_lines: self.n_lines + self.n_rej]
        return x, rej


def _plan(problem, poly, x, rej, objective, vertex=True) -> RoutingPlan:
    rejection = {}
    if poly.with_rejection:
        rejection = {i: float(r) for i, r in zip(poly.types, rej)}
    return RoutingPlan(problem.lines, x, rejection, float(objective), vertex)


def solve_primary(problem: LpProblem) -> RoutingPlan | None:
    """Maximise total payoff rate; ``None`` when the polytope is empty."""
    poly = _Polytope(problem, with_rejection=False)
    th = problem.capped_theta()
    res = poly.solve(th)
    if res is None:
        return None
    x, rej = res
    return _plan(problem, poly, x, rej, th @ x)


def solve_fallback(problem: LpProblem) -> RoutingPlan:
    """Same objective with a penalised rejection server per type; always feasible."""
    poly = _Polytope(problem, with_rejection=True)
    th = problem.capped_theta()
    x, rej = poly.solve(th)
    return _plan(problem, poly, x, rej, th @ x - problem.penalty * rej.sum())


def solve_routing(problem: LpProblem) -> RoutingPlan:
    """Primary program, falling back to the rejection formulation when empty."""
    plan = solve_primary(problem)
    return plan if plan is not None else solve_fallback(problem)


# ---------------------------------------------------------------------------
# concave objectives


@dataclass
class Penalty:
    """Concave term added to the payoff objective, ``weight * value(x)``.

    ``value`` and ``grad`` take the line-rate vector and the problem. When
    ``quadratic_in`` is set (a matrix ``C``), the term is ``-||C x||^2`` and
    the line search is exact.
    """

    value: Callable[[np.ndarray, LpProblem], float]
    grad: Callable[[np.ndarray, LpProblem], np.ndarray]
    quadratic_in: np.ndarray | None = None


def load_variance_penalty(problem: LpProblem) -> Penalty:
    B = problem.load_matrix()
    J = B.shape[0]
    C = (np.eye(J) - np.full((J, J), 1.0 / J)) @ B
    return Penalty(
        value=lambda x, p: -float(np.sum((C @ x) ** 2)),
        grad=lambda x, p: -2.0 * C.T @ (C @ x),
        quadratic_in=C,
    )


def critical_load_penalty(problem: LpProblem) -> Penalty:
    B = problem.load_matrix()
    return Penalty(
        value=lambda x, p: -float(np.sum(1.0 / (1.0 - B @ x))),
        grad=lambda x, p: -B.T @ (1.0 / (1.0 - B @ x) ** 2),
    )


def waiting_time_penalty(problem: LpProblem) -> Penalty:
    B = problem.load_matrix()
    return Penalty(
        value=lambda x, p: -float(np.sum((B @ x) / (1.0 - B @ x))),
        grad=lambda x, p: -B.T @ (1.0 / (1.0 - B @ x) ** 2),
    )


def deviation_penalty(reference: np.ndarray) -> Penalty:
    ref = np.asarray(reference, dtype=float)
    return Penalty(
        value=lambda x, p: -float(np.sum((x - ref) ** 2)),
        grad=lambda x, p: -2.0 * (x - ref),
        quadratic_in=None,
    )


def spare_routing_bonus() -> Penalty:
    return Penalty(
        value=lambda x, p: float(np.sum(np.log1p(x))),
        grad=lambda x, p: 1.0 / (1.0 + x),
    )


def solve_penalized(problem: LpProblem, penalty: Penalty, weight: float | None = None,
                    with_rejection: bool = False, max_iter: int = FW_MAX_ITER,
                    rel_gap: float = FW_REL_GAP) -> RoutingPlan:
    """Maximise ``theta.x + weight * penalty(x)`` (minus rejection cost) by
    pairwise Frank-Wolfe over the routing polytope, with the simplex as the
    linear oracle."""
    gamma = problem.gamma if weight is None else weight
    poly = _Polytope(problem, with_rejection=with_rejection)
    th = problem.capped_theta()
    p = problem.penalty

    def lmo(g_lines):
        res = poly.solve(g_lines)
        if res is None:
            raise InfeasibleRegion("routing polytope is empty")
        return res

    def f(x, r):
        return float(th @ x) - p * float(r.sum()) + gamma * penalty.value(x, problem)

    x, r = lmo(th)
    if gamma == 0.0:
        return _plan(problem, poly, x, r, f(x, r), vertex=False)

    # active set of vertices with convex weights; pairwise steps shift weight
    # from the worst active vertex to the oracle vertex
    verts: list[tuple[np.ndarray, np.ndarray]] = [(x.copy(), r.copy())]
    wts = [1.0]
    quad = penalty.quadratic_in
    for it in range(max_iter):
        g = th + gamma * penalty.grad(x, problem)
        s, sr = lmo(g)
        gap = float(g @ (s - x)) - p * float(sr.sum() - r.sum())
        val = f(x, r)
        if gap <= rel_gap * max(1.0, abs(val)):
            return _plan(problem, poly, x, r, val, vertex=False)
        scores = [float(g @ v) - p * float(vr.sum()) for v, vr in verts]
        a = int(np.argmin(scores))
        dx, dr = s - verts[a][0], sr - verts[a][1]
        tmax = wts[a]
        slope = float(g @ dx) - p * float(dr.sum())
        if quad is not None:
            curv = gamma * float(np.sum((quad @ dx) ** 2))
            t = tmax if curv <= 0 else min(tmax, slope / (2.0 * curv))
        else:
            res = minimize_scalar(lambda t: -f(x + t * dx, r + t * dr),
                                  bounds=(0.0, tmax), method="bounded",
                                  options={"xatol": 1e-12})
            t = float(res.x)
        t = max(t, 0.0)
        x = x + t * dx
        r = r + t * dr
        wts[a] -= t
        for k, (v, vr) in enumerate(verts):
            if np.allclose(v, s, rtol=0, atol=1e-12) and np.allclose(vr, sr, rtol=0, atol=1e-12):
                wts[k] += t
                break
        else:
            verts.append((s, sr))
            wts.append(t)
        keep = [k for k, w in enumerate(wts) if w > 1e-14]
        verts = [verts[k] for k in keep]
        wts = [wts[k] for k in keep]
    raise NumericalFailure(f"Frank-Wolfe did not reach the duality-gap tolerance in {max_iter} iterations")


def solve_fairness(problem: LpProblem, with_rejection: bool = False) -> RoutingPlan:
    """Payoff minus ``gamma`` times the spread of server loads around their mean."""
    return solve_penalized(problem, load_variance_penalty(problem), problem.gamma,
                           with_rejection=with_rejection)


def load_variance(problem: LpProblem, x: np.ndarray) -> float:
    rho = problem.loads(x)
    return float(np.sum((rho - rho.mean()) ** 2))


# ---------------------------------------------------------------------------
# spanning forest


def extract_spanning_forest(plan: RoutingPlan, problem: LpProblem) -> SpanningForest:
    """Orient the support of a vertex plan as a forest rooted at slack servers.

    Queues and servers alternate along every path. In each component the
    root is the server with the most slack (lowest index on ties).
    """
    if not plan.is_vertex:
        raise NotAVertex("spanning forests exist only for vertex solutions")
    x = np.asarray(plan.rates, dtype=float)
    lam_max = float(problem.lam.max()) if len(problem.lam) else 0.0
    thr = EDGE_REL_THRESHOLD * max(lam_max, 1e-300)
    edges = {problem.lines[n] for n in range(len(x)) if x[n] > thr}

    adj: dict[tuple[str, int], list[tuple[str, int]]] = {}
    for i, j in sorted(edges):
        adj.setdefault(("q", i), []).append(("s", j))
        adj.setdefault(("s", j), []).append(("q", i))
    for j in range(problem.num_servers):
        adj.setdefault(("s", j), [])

    slack = (1.0 - problem.epsilon) - problem.loads(np.where(x > thr, x, 0.0))
    seen: set = set()
    parent_of_queue: dict[int, int | None] = {}
    children_of_server: dict[int, list[int]] = {j: [] for j in range(problem.num_servers)}
    children_of_queue: dict[int, list[int]] = {}
    parent_of_server: dict[int, int | None] = {}
    roots: set[int] = set()

    nodes = sorted(adj, key=lambda v: (v[0] != "s", v[1]))
    for start in nodes:
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        n_edges = sum(len(adj[v]) for v in comp) // 2
        if n_edges != len(comp) - 1:
            raise CyclicSupport(f"support contains a cycle through {sorted(comp)}")
        servers = sorted(v[1] for v in comp if v[0] == "s")
        root = max(servers, key=lambda j: (slack[j], -j))
        roots.add(root)
        parent_of_server[root] = None
        bfs = deque([("s", root)])
        done = {("s", root)}
        while bfs:
            v = bfs.popleft()
            for w in sorted(adj[v], key=lambda u: u[1]):
                if w in done:
                    continue
                done.add(w)
                if v[0] == "s":
                    children_of_server[v[1]].append(w[1])
                    parent_of_queue[w[1]] = v[1]
                    children_of_queue.setdefault(w[1], [])
                else:
                    children_of_queue.setdefault(v[1], []).append(w[1])
                    parent_of_server[w[1]] = v[1]
                bfs.append(w)
    return SpanningForest(parent_of_queue, children_of_server, children_of_queue,
                          parent_of_server, roots, edges)


# ---------------------------------------------------------------------------
# brute-force reference (used by tests and the validation harness)


def enumerate_vertices(problem: LpProblem, with_rejection: bool = False):
    """Yield every basic feasible solution of the routing polytope.

    Exponential in the problem size; only meant for tiny instances.
    """
    import itertools

    poly = _Polytope(problem, with_rejection=with_rejection)
    A, b = poly.A, poly.b
    m, n = A.shape
    for cols in itertools.combinations(range(n), m):
        Bm = A[:, cols]
        if abs(np.linalg.det(Bm)) < 1e-12:
            continue
        zb = np.linalg.solve(Bm, b)
        if np.any(zb < -1e-9):
            continue
        z = np.zeros(n)
        z[list(cols)] = np.maximum(zb, 0.0)
        x = np.zeros(len(problem.lines))
        x[poly.active] = z[: poly.n_lines]
        yield x, z[poly.n_lines: poly.n_lines + poly.n_rej]


def brute_force_optimum(problem: LpProblem) -> float | None:
    th = problem.capped_theta()
    best = None
    for x, _ in enumerate_vertices(problem):
        v = float(th @ x)
        if best is None or v > best:
            best = v
    return best
