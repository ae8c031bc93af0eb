import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skillroute.data import (CALL_LOG_HEADER, CallRecord, InvalidSpec, NoObservations, Outcome,
                             SyntheticSpec, appendix_d_spec, build_compatibility, build_scenario,
                             derive_payoff, generate_synthetic, hourly_schedule, inject_burst,
                             read_agent_schedule, read_call_log, transform_payoff, write_call_log)
from skillroute.model import validate_config


def rec(t=0.0, typ=0, group=0, outcome="HANDLED", date="2001-06-01", agent="a1", start=None, dur=60.0):
    start = t + 5.0 if start is None else start
    served = outcome != "ABANDON"
    return CallRecord(date, t - 10.0, t, start if served else None,
                      start + dur if served else None, typ, Outcome(outcome),
                      agent if served else None, group if served else None)


# -- payoffs -------------------------------------------------------------------------------

def test_derive_payoff_ratio():
    recs = [rec(t=i) for i in range(7)] + [rec(t=7, outcome="TRANSFER"), rec(t=8, outcome="TRANSFER"),
                                            rec(t=9, outcome="CONFERENCE")]
    assert derive_payoff(recs) == {(0, 0): 0.7}


def test_derive_payoff_all_successful():
    assert derive_payoff([rec(t=i) for i in range(4)]) == {(0, 0): 1.0}


def test_derive_payoff_table_entry():
    recs = [rec(t=i) for i in range(84)] + [rec(t=100 + i, outcome="TRANSFER") for i in range(16)]
    assert derive_payoff(recs) == {(0, 0): 0.84}


def test_derive_payoff_missing_line_warns():
    with pytest.warns(NoObservations):
        out = derive_payoff([rec()], lines=[(0, 0), (1, 0)])
    assert out == {(0, 0): 1.0}


def test_abandoned_and_other_outcomes():
    recs = [rec(t=1), rec(t=2, outcome="ABANDON"), rec(t=3, outcome="OTHER")]
    assert derive_payoff(recs) == {(0, 0): 1.0}
    assert Outcome.parse("weird") is Outcome.OTHER


def test_transform_table_row():
    th = {(1, 0): 0.82, (1, 1): 0.89, (1, 2): 0.86, (1, 3): 1.00}
    out = transform_payoff(th)
    assert [round(out[l], 2) for l in th] == [0.00, 0.62, 0.47, 1.00]
    # the published table rounds these two to 0.61 and 0.45
    assert abs(out[(1, 1)] - 0.61) <= 0.015 and abs(out[(1, 2)] - 0.45) <= 0.025
    assert out[(1, 1)] == pytest.approx(math.sqrt(0.07 / 0.18))


def test_transform_single_and_flat():
    assert transform_payoff({(0, 0): 0.81}) == {(0, 0): pytest.approx(0.9)}
    assert transform_payoff({(0, 0): 0.5, (0, 1): 0.5}) == {(0, 0): 1.0, (0, 1): 1.0}


@given(st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), st.floats(0, 1), min_size=1))
def test_payoffs_stay_in_unit_interval(th):
    out = transform_payoff(th)
    assert set(out) == set(th)
    assert all(0 <= v <= 1 for v in out.values())


# -- compatibility ----------------------------------------------------------------------------

def test_compatibility_threshold_boundary():
    recs = [rec(t=i, group=0) for i in range(99)] + [rec(t=1000 + i, group=1) for i in range(100)]
    assert build_compatibility(recs, 100) == {(0, 1)}


def groupby_oracle(records, threshold):
    served = [r for r in records if r.outcome is not Outcome.ABANDON]
    key = lambda r: (r.date, r.vru_entry_time, r.queue_join_time, r.customer_type)
    first = [min(g, key=lambda r: r.service_start_time)
             for _, g in itertools.groupby(sorted(served, key=key), key=key)]
    pair = lambda r: (r.customer_type, r.agent_group)
    counts = {k: len(list(g)) for k, g in itertools.groupby(sorted(first, key=pair), key=pair)}
    return {k for k, n in counts.items() if n >= threshold}


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_compatibility_matches_groupby(seed, threshold):
    rng = np.random.default_rng(seed)
    recs = []
    for n in range(300):
        t = float(rng.integers(0, 5000))
        typ = int(rng.integers(0, 3))
        out = rng.choice(["HANDLED", "TRANSFER", "ABANDON", "CONFERENCE"], p=[.6, .2, .1, .1])
        recs.append(rec(t=t, typ=typ, group=int(rng.integers(0, 4)), outcome=str(out)))
        if out == "TRANSFER" and rng.random() < 0.5:
            # second leg of a multi-agent call: same key, later start, other group
            recs.append(rec(t=t, typ=typ, group=int(rng.integers(0, 4)), start=t + 100.0))
    assert build_compatibility(recs, threshold) == groupby_oracle(recs, threshold)


def test_multi_agent_call_counted_once_for_first_group():
    legs = [rec(t=0, group=2, start=50.0, outcome="TRANSFER"), rec(t=0, group=1, start=10.0)]
    assert build_compatibility(legs, 1) == {(0, 1)}


# -- CSV ingestion ------------------------------------------------------------------------------

def make_log(tmp_path):
    rng = np.random.default_rng(0)
    recs = []
    for day in ("2001-06-01", "2001-06-02"):
        for n in range(400):
            t = float(rng.integers(0, 86000))
            typ = int(rng.integers(0, 2))
            g = [10, 20][typ] if rng.random() < 0.8 else 30
            oc = "TRANSFER" if rng.random() < 0.2 else "HANDLED"
            recs.append(rec(t=t, typ=typ, group=g, outcome=oc, date=day, dur=float(rng.integers(30, 300))))
    recs.append(rec(t=5.0, outcome="ABANDON"))
    write_call_log(tmp_path / "calls.csv", recs)
    with open(tmp_path / "agents.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("date", "hour", "agent_group", "count"))
        for day in ("2001-06-01", "2001-06-02"):
            for g in (10, 20, 30):
                for h in range(24):
                    w.writerow((day, h, g, 2 if 8 <= h < 18 else 1))
    return recs


def test_csv_round_trip(tmp_path):
    recs = make_log(tmp_path)
    back = read_call_log(tmp_path / "calls.csv")
    assert back == [r for r in recs if r.outcome is not Outcome.ABANDON]
    assert len(read_call_log(tmp_path / "calls.csv", keep_abandoned=True)) == len(recs)
    with open(tmp_path / "calls.csv") as fh:
        assert tuple(next(csv.reader(fh))) == CALL_LOG_HEADER


def test_scenario_ingestion_idempotent(tmp_path):
    make_log(tmp_path)
    sched = read_agent_schedule(tmp_path / "agents.csv")
    a = build_scenario(read_call_log(tmp_path / "calls.csv"), sched, "2001-06-01", threshold=20)
    b = build_scenario(read_call_log(tmp_path / "calls.csv"), sched, "2001-06-01", threshold=20)
    assert a.config == b.config and a.group_ids == b.group_ids == (10, 20, 30)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrivals, b.arrivals))
    assert validate_config(a.config) == []
    assert sum(len(x) for x in a.arrivals) == 400
    assert a.config.capacity[0].count_at(9 * 3600) == 2
    for th in a.theta_by_day.values():
        assert all(0 <= v <= 1 for v in th.values())


def test_scenario_unknown_day(tmp_path):
    make_log(tmp_path)
    with pytest.raises(InvalidSpec):
        build_scenario(read_call_log(tmp_path / "calls.csv"), {}, "1999-01-01", threshold=20)


def test_hourly_schedule_compacts():
    cs = hourly_schedule([1, 1, 2, 2, 0])
    assert cs.times == (0.0, 7200.0, 14400.0) and cs.counts == (1, 2, 0)


# -- bursts -------------------------------------------------------------------------------------

def base_scenario():
    return generate_synthetic(SyntheticSpec(2, 1, [0.05, 0.05], {0: 10.0}, horizon=3600.0), seed=1)


def test_burst_zero_is_identity():
    sc = base_scenario()
    assert inject_burst(sc, 0, 0, (100, 700), 5) is sc


def test_burst_adds_exactly():
    sc = base_scenario()
    out = inject_burst(sc, 1, 2000, (1000.0, 1600.0), 5)
    assert out.arrival_count(1, 1000, 1600) - sc.arrival_count(1, 1000, 1600) == 2000
    assert out.arrival_count(1) - sc.arrival_count(1) == 2000
    assert np.array_equal(out.arrivals[0], sc.arrivals[0])
    assert np.all(np.diff(out.arrivals[1]) >= 0)
    assert set(sc.arrivals[1]) <= set(out.arrivals[1])


def test_bursts_additive_and_deterministic():
    sc = base_scenario()
    one = inject_burst(sc, 0, 300, (100.0, 200.0), 1)
    two = inject_burst(one, 0, 500, (2000.0, 2100.0), 2)
    assert two.arrival_count(0) == sc.arrival_count(0) + 800
    assert np.array_equal(two.arrivals[0], inject_burst(inject_burst(sc, 0, 300, (100.0, 200.0), 1),
                                                        0, 500, (2000.0, 2100.0), 2).arrivals[0])


# -- synthetic --------------------------------------------------------------------------------------

def test_poisson_count_within_three_sigma():
    sc = generate_synthetic(SyntheticSpec(1, 1, [1.0], {0: 1.0}, horizon=1e4), seed=3)
    assert abs(len(sc.arrivals[0]) - 1e4) < 3 * math.sqrt(1e4)


def test_zero_rate_empty():
    sc = generate_synthetic(SyntheticSpec(1, 1, [0.0], {0: 1.0}, horizon=1e4), seed=3)
    assert len(sc.arrivals[0]) == 0


def test_appendix_d_spec_valid():
    sc = generate_synthetic(appendix_d_spec(), seed=0)
    cfg = sc.config
    assert validate_config(cfg) == []
    assert (cfg.num_types, cfg.num_servers, len(cfg.lines)) == (3, 3, 9)
    assert [cfg.services[(0, j)].mean() for j in range(3)] == [1.0, 0.2, 0.1]


def test_synthetic_deterministic_and_pools():
    spec = SyntheticSpec(2, 2, [0.1, [(0.0, 0.2), (500.0, 0.0)]], {0: 5.0, 1: 8.0},
                         service_kind="lognormal", service_cv=0.5, pool_size=50, horizon=1000.0,
                         agents=[2, [1, 3]], hour=250.0)
    a, b = generate_synthetic(spec, 7), generate_synthetic(spec, 7)
    assert a.config == b.config
    assert all(np.array_equal(x, y) for x, y in zip(a.arrivals, b.arrivals))
    assert a.arrivals[1].max() < 500.0
    assert len(a.pools[(0, 1)]) == 50
    assert a.config.capacity[1].count_at(300.0) == 3


@pytest.mark.parametrize("bad", [
    dict(rates=[0.1]),
    dict(rates=[[(5.0, 0.1)], 0.1]),
    dict(rates=[-0.1, 0.1]),
    dict(lines=[(0, 5)]),
    dict(service_kind="gamma"),
    dict(theta_range=(0.5, 1.5)),
    dict(service_mean={0: 1.0}),
])
def test_invalid_spec(bad):
    kw = dict(num_types=2, num_servers=2, rates=[0.1, 0.1], service_mean={0: 1.0, 1: 1.0})
    kw.update(bad)
    with pytest.raises(InvalidSpec):
        generate_synthetic(SyntheticSpec(**kw))
