import math

import numpy as np
import pytest
from hypothesis import settings

from skillroute.model import (ArrivalSource, CapacitySchedule, Distribution, SystemConfig)

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")


def simple_config(lines, lam, service_mean, theta, num_types=None, num_servers=None,
                  capacity=None, arrivals=None):
    """Small config with Poisson arrivals and exponential services.

    ``service_mean`` and ``theta`` are dicts keyed by line (or scalars)."""
    I = num_types if num_types is not None else 1 + max(i for i, _ in lines)
    J = num_servers if num_servers is not None else 1 + max(j for _, j in lines)
    if not isinstance(service_mean, dict):
        service_mean = {l: service_mean for l in lines}
    if not isinstance(theta, dict):
        theta = {l: theta for l in lines}
    if arrivals is None:
        arrivals = tuple(ArrivalSource.poisson(r) for r in lam)
    return SystemConfig(
        I, J, tuple(lines), tuple(arrivals),
        {l: Distribution.exponential(service_mean[l]) for l in lines},
        {l: theta[l] for l in lines},
        tuple(capacity) if capacity is not None else (),
    )


@pytest.fixture
def mm1_config():
    return simple_config([(0, 0)], [0.5], 1.0, 0.5)


@pytest.fixture
def two_by_two():
    lines = [(0, 0), (0, 1), (1, 1)]
    return simple_config(lines, [0.3, 0.4], 1.0, {(0, 0): 0.9, (0, 1): 0.4, (1, 1): 0.7})


def replay_waiting(log, config):
    """Event-by-event replay of a log: yields (time, idle servers with agents,
    waiting customers by type) after the last record at each timestamp."""
    count = [cs.count_at(0.0) for cs in config.capacity]
    busy = {}
    waiting = {i: set() for i in range(config.num_types)}
    recs = log.records
    for n, (t, s, k, i, j, c, v) in enumerate(recs):
        if k == 0:
            waiting[i].add(c)
        elif k == 1:
            waiting[i].discard(c)
            busy[j] = c
        elif k == 2:
            busy.pop(j, None)
        elif k == 3:
            count[j] = int(v)
        if n + 1 == len(recs) or recs[n + 1][0] != t:
            idle = [jj for jj in range(config.num_servers) if jj not in busy and count[jj] > 0]
            yield t, idle, waiting


def close(a, b, rel=1e-9):
    return math.isclose(a, b, rel_tol=rel, abs_tol=rel)


def rng(seed=0):
    return np.random.default_rng(seed)


# acceptance criteria report one verdict line each; collected here and
# printed in the terminal summary so they show without -s
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
