"""Trading payoff for balanced load with the quadratic fairness term.

First at the optimisation level (plans for a grid of gamma), then in
simulation with the Oracle policy on the matching scenario.

Run:  python demos/fairness_tradeoff.py
"""
import numpy as np

from skillroute import lp
from skillroute.data import FAIRNESS_THETA, fairness_spec, generate_synthetic
from skillroute.engine import run_replication
from skillroute.metrics import compute_kpis
from skillroute.model import PolicySpec

lines = sorted(FAIRNESS_THETA)
print(f"{'gamma':>6s} {'payoff term':>12s} {'load var':>10s}  loads")
for g in (0.0, 0.01, 0.1, 1.0):
    prob = lp.LpProblem(lines, 3, [0.8, 0.8], [1.0] * len(lines), [FAIRNESS_THETA[l] for l in lines],
                        gamma=g, objective_kind=lp.ObjectiveKind.FAIRNESS_QUADRATIC)
    plan = lp.solve_fairness(prob)
    print(f"{g:6g} {prob.theta @ plan.rates:12.4f} {lp.load_variance(prob, plan.rates):10.5f}  "
          f"{np.round(prob.loads(plan.rates), 3)}")

print("\nin simulation (Oracle, 2 replications):")
spec = fairness_spec()
for g in (0.0, 1.0):
    logs = []
    for seed in range(2):
        sc = generate_synthetic(spec, seed)
        logs.append(run_replication(sc.config, PolicySpec(kind="ORACLE", gamma=g), seed, sc.horizon))
    rep = compute_kpis(logs, bin_width=600.0)
    print(f"  gamma={g:g}: payoff/completion {rep.payoff_per_completion:.4f}, "
          f"mean wait {rep.mean_wait:.1f}s, busy {np.round(rep.server_load, 3)}")
