import numpy as np
import pytest

from skillroute.engine import (ARRIVAL, DEPARTURE, EPISODE_END, SCHEDULE_UPDATE, START, EmptyPool,
                               EventLog, Simulation, Stream, run_replication,
                               sample_service_duration)
from skillroute.data import appendix_d_config, day_spec, generate_synthetic
from skillroute.metrics import check_log
from skillroute.model import (ArrivalSource, CapacitySchedule, ConfigInvalid, Distribution,
                              PolicySpec, SystemConfig)

from conftest import replay_waiting, simple_config


def one_customer(work, capacity, arrive=0.0, horizon=1000.0, servers=1):
    lines = [(0, j) for j in range(servers)]
    cfg = SystemConfig(1, servers, lines, (ArrivalSource.from_times([arrive]),),
                       {l: Distribution.deterministic(work) for l in lines}, {l: 1.0 for l in lines},
                       tuple(capacity))
    return run_replication(cfg, PolicySpec(kind="FCFS_ALIS"), 0, horizon)


def departures(log):
    return [(r[0], r[4]) for r in log.records if r[2] == DEPARTURE]


# -- M/M/1 --------------------------------------------------------------------------

def test_mm1_mean_wait(mm1_config):
    log = run_replication(mm1_config, PolicySpec(kind="RANDOM"), 1, 1e5)
    a = log.arrays()
    arr = dict(zip(a["customer"][a["kind"] == ARRIVAL], a["time"][a["kind"] == ARRIVAL]))
    st = a["kind"] == START
    waits = a["time"][st] - np.array([arr[c] for c in a["customer"][st]])
    lam, mu = 0.5, 1.0
    expected = (lam / mu) / (mu - lam)
    assert abs(waits.mean() - expected) < 0.1 * expected
    assert check_log(log) == []


def test_zero_arrivals_only_bookkeeping():
    cfg = SystemConfig(1, 1, ((0, 0),), (ArrivalSource.from_times([]),),
                       {(0, 0): Distribution.exponential(1.0)}, {(0, 0): 0.5},
                       (CapacitySchedule((0.0, 50.0), (1, 3)),))
    log = run_replication(cfg, PolicySpec(episode_length=30.0), 0, 100.0)
    assert {r[2] for r in log.records} == {SCHEDULE_UPDATE, EPISODE_END}


def test_same_seed_identical_logs(two_by_two):
    for kind in ("UCBQR", "FCFS_ALIS", "RANDOM"):
        a = run_replication(two_by_two, PolicySpec(kind=kind, episode_length=20.0), 5, 2000.0)
        b = run_replication(two_by_two, PolicySpec(kind=kind, episode_length=20.0), 5, 2000.0)
        assert a.to_tsv().encode() == b.to_tsv().encode()
        c = run_replication(two_by_two, PolicySpec(kind=kind, episode_length=20.0), 6, 2000.0)
        assert c.to_tsv() != a.to_tsv()


def test_tsv_round_trip(two_by_two):
    log = run_replication(two_by_two, PolicySpec(kind="GREEDY"), 0, 500.0)
    back = EventLog.from_tsv(log.to_tsv(), two_by_two.lines)
    assert back.records == log.records
    assert back.to_tsv() == log.to_tsv()
    assert log.to_tsv().splitlines()[1] == "time\tseq\tkind\ttype\tserver\tcustomer\tvalue"


def test_paired_arrivals_across_policies(two_by_two):
    logs = [run_replication(two_by_two, PolicySpec(kind=k), 9, 3000.0)
            for k in ("UCBQR", "ORACLE", "FCFS_ALIS", "GREEDY", "RANDOM", "THETA_MU")]
    arrivals = [[(r[0], r[3]) for r in lg.records if r[2] == ARRIVAL] for lg in logs]
    assert all(a == arrivals[0] for a in arrivals[1:])
    assert len(arrivals[0]) > 1000


# -- schedule updates -------------------------------------------------------------------

def test_rescale_two_to_four():
    # 300 s of single-agent work on 2 agents: 150 s wall clock. At t=50, 100 s remain
    # at the old speed; doubling the agents halves that to 50 s.
    log = one_customer(300.0, [CapacitySchedule((0.0, 50.0), (2, 4))])
    assert departures(log) == [(100.0, 0)]


def test_rescale_identity():
    log = one_customer(300.0, [CapacitySchedule((0.0, 50.0), (2, 2))])
    assert departures(log) == [(150.0, 0)]


def test_drop_to_zero_mid_service_finishes_on_time():
    log = one_customer(300.0, [CapacitySchedule((0.0, 50.0), (2, 0))])
    assert departures(log) == [(150.0, 0)]


def test_inactive_server_gets_nothing():
    # server 0 closes at t=10 while idle; the customer arriving at t=20 must go to server 1
    log = one_customer(5.0, [CapacitySchedule((0.0, 10.0), (1, 0)), CapacitySchedule.constant(1)],
                       arrive=20.0, servers=2)
    assert departures(log) == [(25.0, 1)]
    sim = Simulation(simple_config([(0, 0)], [0.0], 1.0, 0.5,
                                   capacity=[CapacitySchedule((0.0, 10.0), (1, 0))]),
                     PolicySpec(kind="FCFS_ALIS"), 0, 20.0)
    sim.run()
    assert sim.status(0) == "INACTIVE"


def test_reopening_server_serves_waiting_customer():
    log = one_customer(10.0, [CapacitySchedule((0.0, 100.0), (0, 1))], arrive=5.0)
    starts = [(r[0], r[4]) for r in log.records if r[2] == START]
    assert starts == [(100.0, 0)] and departures(log) == [(110.0, 0)]


# -- service sampling --------------------------------------------------------------------

def test_sample_singleton_pool():
    d = Distribution.empirical([200.0])
    s = Stream(0, 1)
    assert sample_service_duration(d, 1, s) == 200.0
    assert sample_service_duration(d, 4, s) == 50.0


def test_sample_empty_pool():
    with pytest.raises(EmptyPool):
        sample_service_duration(Distribution.empirical([]), 1, Stream(0, 1))


def test_sample_exponential_mean():
    s = Stream(42, 1, 0)
    d = Distribution.exponential(257.0)
    x = np.array([sample_service_duration(d, 1, s) for _ in range(100_000)])
    assert abs(x.mean() - 257.0) < 0.02 * 257.0


def test_sample_lognormal_moments():
    s = Stream(1, 1, 0)
    d = Distribution.lognormal(30.0, 0.5)
    x = np.array([sample_service_duration(d, 1, s) for _ in range(100_000)])
    assert x.mean() == pytest.approx(30.0, rel=0.01)
    assert x.std() / x.mean() == pytest.approx(0.5, rel=0.03)


# -- invariants --------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["UCBQR", "UCBQR_TREE", "ORACLE", "FCFS_ALIS", "GREEDY",
                                  "RANDOM", "THETA_MU", "UCBQR_LAMBDA", "UCBQR_MU"])
def test_conservation_every_policy(kind):
    cfg = appendix_d_config()
    log = run_replication(cfg, PolicySpec(kind=kind, episode_length=10.0, epsilon=0.01), 3, 300.0,
                          check_invariants=True)
    assert not log.aborted
    assert check_log(log) == []
    lines = set(cfg.lines)
    assert all((r[3], r[4]) in lines for r in log.records if r[2] == START)


def test_conservation_time_varying_day():
    sc = generate_synthetic(day_spec(0.3), seed=2)
    for kind in ("UCBQR", "UCBQR_TREE", "FCFS_ALIS"):
        log = run_replication(sc.config, PolicySpec(kind=kind), 2, sc.horizon, check_invariants=True)
        assert check_log(log) == []


@pytest.mark.parametrize("seed", [0, 1])
def test_fcfs_alis_work_conserving(seed):
    sc = generate_synthetic(day_spec(0.3), seed=seed)
    cfg = sc.config
    log = run_replication(cfg, PolicySpec(kind="FCFS_ALIS"), seed, 12 * 3600.0)
    n = 0
    for t, idle, waiting in replay_waiting(log, cfg):
        for j in idle:
            assert not any(waiting[i] for i in cfg.types_of(j)), f"server {j} idles at t={t}"
        n += 1
    assert n > 1000


def test_check_log_catches_problems():
    log = EventLog(1, 1, ((0, 0),), 10.0, 0, "x")
    log.records = [(0.0, 0, ARRIVAL, 0, -1, 0, -1.0), (1.0, 1, START, 0, 0, 0, -1.0),
                   (0.5, 2, ARRIVAL, 0, -1, 1, -1.0), (2.0, 3, START, 0, 0, 1, -1.0),
                   (3.0, 4, DEPARTURE, 0, 0, 1, 0.5)]
    probs = check_log(log)
    assert any("backwards" in p for p in probs)
    assert any("while serving" in p for p in probs)
    assert any("payoff draw" in p for p in probs)


def test_invalid_inputs_rejected(mm1_config):
    with pytest.raises(ConfigInvalid):
        run_replication(mm1_config, PolicySpec(), 0, 0.0)
    with pytest.raises(ConfigInvalid):
        run_replication(mm1_config, PolicySpec(kind="UCBQR_TREE", gamma=0.5), 0, 10.0)
