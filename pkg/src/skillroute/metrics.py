"""Performance measures computed from event logs.

All series are averaged over replications. Waiting times are attributed to
the bin containing the customer's arrival; customers still waiting when the
horizon is reached have no waiting time and are left out.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .engine import ARRIVAL, DEPARTURE, EPISODE_END, SCHEDULE_UPDATE, START, EventLog

Z95 = float(norm.ppf(0.975))
MIN_CI_OBS = 5


class EmptyLog(ValueError):
    pass


class ZeroOracle(ZeroDivisionError):
    pass


@dataclass
class KpiReport:
    policy: str
    replications: int
    horizon: float
    bin_width: float
    lines: tuple
    total_payoff: float
    total_payoff_per_rep: np.ndarray
    completions: float
    payoff_per_completion: float
    mean_wait: float
    bin_edges: np.ndarray
    wait_mean: np.ndarray
    wait_ci: np.ndarray          # (nbins, 2), NaN when not computable
    wait_count: np.ndarray       # pooled observations per bin
    office_window: tuple
    office_quartiles: tuple      # (q1, median, q3, mean)
    routing_volume: np.ndarray   # mean departures per line
    server_load: np.ndarray      # busy fraction per server at the horizon
    load_variance: float
    grid: np.ndarray
    empirical_rates: np.ndarray  # (len(grid), n_lines): D_ij(t)/t
    queue_lengths: np.ndarray    # (len(grid), n_types)
    payoff_relative_to_oracle: float | None = None
    aborted: int = 0
    extra: dict = field(default_factory=dict)

    def peak_wait(self, start: float = 0.0, end: float = math.inf) -> float:
        lo = self.bin_edges[:-1]
        m = (lo >= start) & (lo < end) & np.isfinite(self.wait_mean)
        return float(np.max(self.wait_mean[m])) if m.any() else math.nan

    def window_wait(self, start: float, end: float) -> float:
        """Observation-weighted mean wait over bins starting in ``[start, end)``."""
        lo = self.bin_edges[:-1]
        m = (lo >= start) & (lo < end) & (self.wait_count > 0)
        if not m.any():
            return math.nan
        return float(np.average(self.wait_mean[m], weights=self.wait_count[m]))

    # -- serialization ------------------------------------------------------

    def scalars(self) -> dict:
        q1, q2, q3, qm = self.office_quartiles
        return {
            "policy": self.policy, "replications": self.replications,
            "horizon": self.horizon, "total_payoff": self.total_payoff,
            "completions": self.completions,
            "payoff_per_completion": self.payoff_per_completion,
            "payoff_relative_to_oracle": self.payoff_relative_to_oracle,
            "mean_wait": self.mean_wait, "office_wait_q1": q1, "office_wait_median": q2,
            "office_wait_q3": q3, "office_wait_mean": qm,
            "load_variance": self.load_variance, "aborted": self.aborted,
        }

    def to_rows(self) -> list[tuple]:
        """Flat rows ``(metric, key, t, value, ci_low, ci_high)``."""
        rows = []
        for k, v in self.scalars().items():
            if k != "policy":
                rows.append((k, "", "", v, "", ""))
        for j, b in enumerate(self.server_load):
            rows.append(("server_load", f"server={j}", "", b, "", ""))
        for (i, j), v in zip(self.lines, self.routing_volume):
            rows.append(("routing_volume", f"line={i}-{j}", "", v, "", ""))
        for b, t in enumerate(self.bin_edges[:-1]):
            lo, hi = self.wait_ci[b]
            rows.append(("wait_mean", "", t, self.wait_mean[b],
                         "" if math.isnan(lo) else lo, "" if math.isnan(hi) else hi))
        for g, t in enumerate(self.grid):
            for n, (i, j) in enumerate(self.lines):
                rows.append(("empirical_rate", f"line={i}-{j}", t, self.empirical_rates[g, n], "", ""))
            for i in range(self.queue_lengths.shape[1]):
                rows.append(("queue_length", f"type={i}", t, self.queue_lengths[g, i], "", ""))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "key", "t", "value", "ci_low", "ci_high"))
        for r in self.to_rows():
            w.writerow(tuple(_fmt(x) for x in r))
        return buf.getvalue()

    def to_json(self) -> str:
        def arr(a):
            return [None if (isinstance(v, float) and math.isnan(v)) else v
                    for v in np.asarray(a, dtype=float).tolist()]
        doc = self.scalars()
        doc.update({
            "bin_width": self.bin_width,
            "lines": [list(l) for l in self.lines],
            "total_payoff_per_rep": arr(self.total_payoff_per_rep),
            "waiting_time_series": {
                "bin_start": arr(self.bin_edges[:-1]), "mean": arr(self.wait_mean),
                "ci_low": arr(self.wait_ci[:, 0]), "ci_high": arr(self.wait_ci[:, 1]),
                "count": [int(c) for c in self.wait_count],
            },
            "office_window": list(self.office_window),
            "routing_volume": arr(self.routing_volume),
            "server_load": arr(self.server_load),
            "grid": arr(self.grid),
            "empirical_rates": [arr(r) for r in self.empirical_rates],
            "queue_lengths": [arr(r) for r in self.queue_lengths],
        })
        for k, v in doc.items():
            if isinstance(v, float) and math.isnan(v):
                doc[k] = None
        return json.dumps(doc, indent=1, sort_keys=True)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    if x is None:
        return ""
    return x


def _bin2(rows, cols, nr, nc) -> np.ndarray:
    return np.bincount(rows * nc + cols, minlength=nr * nc).reshape(nr, nc).astype(float)


def _log_pieces(log: EventLog):
    """Per-customer arrival/start/departure times and per-line departure data."""
    a = log.arrays()
    kind, t, cust = a["kind"], a["time"], a["customer"]
    arr = kind == ARRIVAL
    ncust = int(cust[arr].max()) + 1 if arr.any() else 0
    t_arr = np.full(ncust, np.nan)
    t_arr[cust[arr]] = t[arr]
    typ = np.full(ncust, -1, dtype=np.int64)
    typ[cust[arr]] = a["type"][arr]
    st = kind == START
    t_start = np.full(ncust, np.nan)
    t_start[cust[st]] = t[st]
    srv = np.full(ncust, -1, dtype=np.int64)
    srv[cust[st]] = a["server"][st]
    dp = kind == DEPARTURE
    t_dep = np.full(ncust, np.nan)
    t_dep[cust[dp]] = t[dp]
    return a, t_arr, typ, t_start, srv, t_dep, dp


def compute_kpis(logs: list[EventLog], bin_width: float = 60.0,
                 office_window: tuple[float, float] = (6 * 3600.0, 21 * 3600.0),
                 oracle: "KpiReport | None" = None) -> KpiReport:
    logs = list(logs)
    if not logs:
        raise EmptyLog("no event logs given")
    ref = logs[0]
    I, J, lines, H = ref.num_types, ref.num_servers, tuple(ref.lines), ref.horizon
    for lg in logs[1:]:
        if (lg.num_types, lg.num_servers, lg.horizon) != (I, J, H):
            raise ValueError("logs come from different scenarios")
    L = len(lines)
    line_id = np.full((I, J), -1, dtype=np.int64)
    for n, (i, j) in enumerate(lines):
        line_id[i, j] = n
    R = len(logs)
    nb = max(int(math.ceil(H / bin_width - 1e-12)), 1)
    edges = np.minimum(np.arange(nb + 1) * bin_width, H)
    edges[-1] = H
    grid = edges[1:]

    payoff = np.zeros(R)
    ncomp = np.zeros(R)
    rep_wait = np.full(R, np.nan)
    bin_sum = np.zeros((R, nb))
    bin_cnt = np.zeros((R, nb))
    volume = np.zeros((R, L))
    load = np.zeros((R, J))
    rates = np.zeros((R, len(grid), L))
    qlen = np.zeros((R, len(grid), I))
    office: list[np.ndarray] = []

    for r, lg in enumerate(logs):
        a, t_arr, typ, t_start, srv, t_dep, dp = _log_pieces(lg)
        y = a["value"][dp]
        payoff[r] = y.sum()
        ncomp[r] = dp.sum()

        started = ~np.isnan(t_start)
        w = t_start[started] - t_arr[started]
        if w.size:
            rep_wait[r] = w.mean()
        b = np.minimum((t_arr[started] // bin_width).astype(np.int64), nb - 1)
        bin_sum[r] = np.bincount(b, weights=w, minlength=nb)
        bin_cnt[r] = np.bincount(b, minlength=nb)
        ow = (t_arr[started] >= office_window[0]) & (t_arr[started] < office_window[1])
        office.append(w[ow])

        # busy time: completed services plus the one in progress at the horizon
        end = np.where(np.isnan(t_dep), H, t_dep)
        busy = np.bincount(srv[started], weights=end[started] - t_start[started], minlength=J)
        load[r] = busy[:J] / H

        dcust = a["customer"][dp]
        dline = line_id[typ[dcust], srv[dcust]]
        volume[r] = np.bincount(dline, minlength=L)
        dt = a["time"][dp]
        # cumulative counts at grid points via binning on the same edges
        gb = np.minimum(np.searchsorted(grid, dt, side="left"), len(grid) - 1)
        rates[r] = np.cumsum(_bin2(gb, dline, len(grid), L), axis=0) / grid[:, None]
        ok = ~np.isnan(t_arr)
        ab = np.minimum(np.searchsorted(grid, t_arr[ok], side="left"), len(grid) - 1)
        sb = np.minimum(np.searchsorted(grid, t_start[started], side="left"), len(grid) - 1)
        qlen[r] = np.cumsum(_bin2(ab, typ[ok], len(grid), I)
                            - _bin2(sb, typ[started], len(grid), I), axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        rep_bin_mean = bin_sum / bin_cnt
    has = bin_cnt > 0
    nrep_b = has.sum(axis=0)
    pooled = bin_cnt.sum(axis=0)
    wait_mean = np.full(nb, np.nan)
    ci = np.full((nb, 2), np.nan)
    for b in range(nb):
        vals = rep_bin_mean[has[:, b], b]
        if vals.size == 0:
            continue
        m = vals.mean()
        wait_mean[b] = m
        if vals.size >= 2 and pooled[b] >= MIN_CI_OBS:
            half = Z95 * vals.std(ddof=1) / math.sqrt(vals.size)
            ci[b] = (m - half, m + half)

    ow = np.concatenate(office) if office else np.zeros(0)
    if ow.size:
        q1, q2, q3 = np.percentile(ow, [25, 50, 75])
        quart = (float(q1), float(q2), float(q3), float(ow.mean()))
    else:
        quart = (math.nan,) * 4

    mean_load = load.mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ppc = payoff.sum() / ncomp.sum() if ncomp.sum() > 0 else math.nan
    rep_wait_ok = rep_wait[~np.isnan(rep_wait)]
    rep = KpiReport(
        policy=ref.policy, replications=R, horizon=H, bin_width=bin_width, lines=lines,
        total_payoff=float(payoff.mean()), total_payoff_per_rep=payoff,
        completions=float(ncomp.mean()), payoff_per_completion=float(ppc),
        mean_wait=float(rep_wait_ok.mean()) if rep_wait_ok.size else math.nan,
        bin_edges=edges, wait_mean=wait_mean, wait_ci=ci, wait_count=pooled.astype(np.int64),
        office_window=tuple(office_window), office_quartiles=quart,
        routing_volume=volume.mean(axis=0), server_load=mean_load,
        load_variance=float(np.var(mean_load)), grid=grid,
        empirical_rates=rates.mean(axis=0), queue_lengths=qlen.mean(axis=0),
        aborted=sum(1 for lg in logs if lg.aborted),
    )
    if oracle is not None:
        rep.payoff_relative_to_oracle = relative_payoff(rep, oracle)
    return rep


def relative_payoff(report: KpiReport, oracle: KpiReport, per_completion: bool = False) -> float:
    """Ratio of mean total payoffs (or payoff per completion) to the oracle's."""
    num = report.payoff_per_completion if per_completion else report.total_payoff
    den = oracle.payoff_per_completion if per_completion else oracle.total_payoff
    if not den or math.isnan(den):
        raise ZeroOracle("oracle payoff is zero")
    return float(num / den)


def check_log(log: EventLog) -> list[str]:
    """Consistency problems in a log; empty when the log is sound.

    Checks time and sequence ordering, per-customer event order, that a
    server never starts a second service before finishing the first, and the
    conservation identity arrived = departed + waiting + in service after
    every event.
    """
    out = []
    last_t, last_s = -math.inf, -1
    arrived = started = departed = 0
    state: dict[int, int] = {}
    serving: dict[int, int] = {}
    for t, s, k, i, j, c, v in log.records:
        if t < last_t:
            out.append(f"time goes backwards at seq {s}")
        if s <= last_s:
            out.append(f"sequence not increasing at seq {s}")
        last_t, last_s = t, s
        if k == ARRIVAL:
            if c in state:
                out.append(f"customer {c} arrives twice")
            state[c] = ARRIVAL
            arrived += 1
        elif k == START:
            if state.get(c) != ARRIVAL:
                out.append(f"customer {c} starts without a pending arrival")
            if j in serving:
                out.append(f"server {j} starts customer {c} while serving {serving[j]}")
            state[c] = START
            serving[j] = c
            started += 1
        elif k == DEPARTURE:
            if state.get(c) != START or serving.get(j) != c:
                out.append(f"customer {c} departs server {j} without being served there")
            if v not in (0.0, 1.0):
                out.append(f"customer {c} has payoff draw {v}")
            state[c] = DEPARTURE
            serving.pop(j, None)
            departed += 1
        elif k not in (SCHEDULE_UPDATE, EPISODE_END):
            out.append(f"unknown record kind {k}")
        waiting = arrived - started
        in_service = started - departed
        if waiting < 0 or in_service < 0 or in_service > log.num_servers:
            out.append(f"conservation violated at seq {s}")
        if len(out) > 20:
            break
    return out
