"""From a raw call log to a simulated day.

Writes a small fake call log and staffing table, derives payoffs and the
compatibility graph from it, and replays the day under two policies.

Run:  python demos/calllog_pipeline.py
"""
import csv
import tempfile
from pathlib import Path

import numpy as np

from skillroute.data import (CallRecord, Outcome, build_scenario, read_agent_schedule, read_call_log,
                             write_call_log)
from skillroute.engine import run_replication
from skillroute.metrics import compute_kpis
from skillroute.model import PolicySpec

rng = np.random.default_rng(1)
day = "2001-06-01"
groups = {0: [10, 30], 1: [20, 30]}           # preferred group first
success = {(0, 10): 0.9, (0, 30): 0.6, (1, 20): 0.85, (1, 30): 0.7}

recs = []
for n in range(3000):
    t = float(rng.uniform(7, 19) * 3600)
    typ = int(rng.integers(0, 2))
    g = groups[typ][0] if rng.random() < 0.7 else groups[typ][1]
    ok = rng.random() < success[(typ, g)]
    start = t + float(rng.exponential(20.0))
    dur = float(rng.exponential(180.0))
    recs.append(CallRecord(day, t - 5.0, t, start, start + dur, typ,
                           Outcome.HANDLED if ok else Outcome.TRANSFER, f"a{n % 40}", g))

tmp = Path(tempfile.mkdtemp())
write_call_log(tmp / "calls.csv", recs)
with open(tmp / "agents.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(("date", "hour", "agent_group", "count"))
    for g in (10, 20, 30):
        for hr in range(24):
            w.writerow((day, hr, g, 6 if 7 <= hr < 19 else 0))

sc = build_scenario(read_call_log(tmp / "calls.csv"), read_agent_schedule(tmp / "agents.csv"),
                    day, threshold=50)
print("agent groups:", sc.group_ids)
print("lines and derived payoffs:")
for l in sc.config.lines:
    print(f"  type {l[0]} -> group {sc.group_ids[l[1]]}: theta {sc.config.payoff[l]:.3f}")

for kind in ("FCFS_ALIS", "UCBQR"):
    log = run_replication(sc.config, PolicySpec(kind=kind), 0, sc.horizon)
    rep = compute_kpis([log], bin_width=3600.0)
    print(f"{kind:10s} payoff {rep.total_payoff:7.1f}  per completion {rep.payoff_per_completion:.4f}  "
          f"mean wait {rep.mean_wait:6.1f}s")
