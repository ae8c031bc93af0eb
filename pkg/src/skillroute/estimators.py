"""Episode-level estimators: UCB payoffs, Holt arrival forecasts, service rates."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


class DegenerateSeries(ValueError):
    pass


@dataclass(frozen=True)
class UcbState:
    """Per-line pull counts and success totals.

    Successes are kept as integers so the empirical mean is exact.
    """

    pulls: np.ndarray
    successes: np.ndarray
    ucb: np.ndarray

    @classmethod
    def initial(cls, n_lines: int) -> "UcbState":
        return cls(np.zeros(n_lines, dtype=np.int64), np.zeros(n_lines, dtype=np.int64),
                   np.full(n_lines, np.inf))

    @property
    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.pulls > 0, self.successes / np.maximum(self.pulls, 1), 0.0)


def ucb_index(mean: np.ndarray, pulls: np.ndarray, k: int) -> np.ndarray:
    bonus = np.sqrt(math.log(k) / np.maximum(pulls, 1))
    return np.where(pulls > 0, mean + bonus, np.inf)


def ucb_update_counts(state: UcbState, k: int, pulls: np.ndarray, successes: np.ndarray) -> UcbState:
    if k < 1:
        raise ValueError("episode index starts at 1")
    T = state.pulls + np.asarray(pulls, dtype=np.int64)
    S = state.successes + np.asarray(successes, dtype=np.int64)
    new = UcbState(T, S, state.ucb)
    return replace(new, ucb=ucb_index(new.mean, T, k))


def ucb_update(state: UcbState, k: int, samples: Sequence[Sequence[int]]) -> UcbState:
    """Fold one episode of Bernoulli outcomes (one list per line) into ``state``."""
    pulls = np.array([len(s) for s in samples], dtype=np.int64)
    succ = np.array([int(sum(s)) for s in samples], dtype=np.int64)
    return ucb_update_counts(state, k, pulls, succ)


@dataclass(frozen=True)
class HoltState:
    level: np.ndarray
    trend: np.ndarray
    forecast: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, n_types: int) -> "HoltState":
        z = np.zeros(n_types)
        return cls(z, z.copy(), z.copy(), 0)


def holt_update_and_forecast(state: HoltState, observed, alpha: float = 0.5,
                             beta: float = 0.2) -> tuple[HoltState, np.ndarray]:
    """One step of Holt's linear trend method.

    The smoothed level mixes the new count with the forecast made for it
    (previous level plus previous trend). Returns the new state and the
    forecast for the next period, which may be negative.
    """
    y = np.asarray(observed, dtype=float)
    prev_fc = state.level + state.trend
    level = alpha * y + (1.0 - alpha) * prev_fc
    trend = beta * (level - state.level) + (1.0 - beta) * state.trend
    fc = level + trend
    return HoltState(level, trend, fc, state.k + 1), fc


def forecast_to_rate(forecast, h: float):
    if not h > 0:
        raise ValueError("episode length must be positive")
    return np.maximum(np.asarray(forecast, dtype=float) / h, 0.0) if np.ndim(forecast) \
        else max(float(forecast) / h, 0.0)


@dataclass(frozen=True)
class ServiceRateState:
    count: np.ndarray
    total: np.ndarray
    mu_init: float = 1e-3

    @classmethod
    def initial(cls, n_lines: int, mu_init: float = 1e-3) -> "ServiceRateState":
        return cls(np.zeros(n_lines, dtype=np.int64), np.zeros(n_lines), mu_init)

    @property
    def estimate(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.count > 0, self.count / np.where(self.total > 0, self.total, 1.0),
                            self.mu_init)


def service_rate_update_totals(state: ServiceRateState, counts, totals) -> ServiceRateState:
    return ServiceRateState(state.count + np.asarray(counts, dtype=np.int64),
                            state.total + np.asarray(totals, dtype=float), state.mu_init)


def service_rate_update(state: ServiceRateState, completed: Sequence[Sequence[float]]) -> ServiceRateState:
    """Extend the running totals with per-line lists of completed durations."""
    counts = [len(d) for d in completed]
    totals = [math.fsum(d) for d in completed]
    return service_rate_update_totals(state, counts, totals)


def mase(forecasts, actuals) -> float:
    """Mean absolute error scaled by the in-sample one-step naive error."""
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(actuals, dtype=float)
    if f.shape != y.shape or y.ndim != 1 or len(y) < 2:
        raise ValueError("need two equal-length series with at least two points")
    naive = np.mean(np.abs(np.diff(y)))
    if naive == 0:
        raise DegenerateSeries("constant series has no naive-forecast error")
    return float(np.mean(np.abs(f - y)) / naive)
