"""How fast UCB-QR learns the payoffs on a stationary system.

Runs UCB-QR, the Oracle (true parameters) and Random with paired seeds
and prints the payoff per completion relative to the Oracle as the
horizon grows.

Run:  python demos/learning_vs_oracle.py
"""
from skillroute.data import generate_synthetic, learning_spec
from skillroute.engine import run_replication
from skillroute.metrics import compute_kpis, relative_payoff
from skillroute.model import PolicySpec

h = 10.0
policies = {"UCBQR": PolicySpec(kind="UCBQR", episode_length=h),
            "ORACLE": PolicySpec(kind="ORACLE", episode_length=h),
            "RANDOM": PolicySpec(kind="RANDOM")}

print(f"{'episodes':>8s} {'UCBQR':>8s} {'RANDOM':>8s}")
for episodes in (50, 200, 1000):
    spec = learning_spec(episodes=episodes, h=h)
    reps = {}
    for name, pol in policies.items():
        logs = []
        for seed in range(4):
            sc = generate_synthetic(spec, seed)
            logs.append(run_replication(sc.config, pol, seed, sc.horizon))
        reps[name] = compute_kpis(logs, bin_width=spec.horizon)
    rel = {k: relative_payoff(reps[k], reps["ORACLE"], per_completion=True) for k in ("UCBQR", "RANDOM")}
    print(f"{episodes:8d} {rel['UCBQR']:8.4f} {rel['RANDOM']:8.4f}")
