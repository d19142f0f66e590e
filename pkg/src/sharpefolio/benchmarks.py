"""Benchmark weight series: bounded mean-variance, balanced, fixed.

The mean-variance benchmark maximizes the ex-post Sharpe ratio of the
trailing window under box constraints, re-optimized on the first trading
day of each calendar quarter and held in between.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError
from .panels import ReturnPanel
from .rng import derive_rng
from .validation import check_weight_vector

__all__ = [
    "MvoConfig",
    "AllocationSeries",
    "project_to_bounded_simplex",
    "mvo_weights",
    "mvo_schedule",
    "balanced_weights",
    "fixed_weights",
    "MeanVarianceAllocator",
    "BalancedAllocator",
    "FixedWeightAllocator",
]


@dataclass(frozen=True)
class MvoConfig:
    lookback_days: int = 756  # three years of trading days
    reset_frequency: str = "quarterly"
    weight_floor: float = 0.1
    weight_cap: float = 0.9
    restarts: int = 50
    restart_seed: int = 0

    def __post_init__(self):
        if self.lookback_days < 2:
            raise ConfigError(f"lookback_days must be at least 2, got {self.lookback_days}")
        if self.reset_frequency != "quarterly":
            raise ConfigError(f"unsupported reset frequency {self.reset_frequency!r}")
        if not 0.0 <= self.weight_floor <= self.weight_cap <= 1.0:
            raise ConfigError(
                f"need 0 <= floor <= cap <= 1, got {self.weight_floor}/{self.weight_cap}"
            )
        if self.restarts < 0:
            raise ConfigError("restarts must be nonnegative")

    def check_feasible(self, n_assets: int) -> None:
        if n_assets < 1:
            raise ConfigError("need at least one asset")
        if self.weight_floor * n_assets > 1.0 + 1e-12 or self.weight_cap * n_assets < 1.0 - 1e-12:
            raise ConfigError(
                f"bounds [{self.weight_floor}, {self.weight_cap}] infeasible for "
                f"{n_assets} assets"
            )


class AllocationSeries:
    """Dated weight rows, one simplex vector per backtest day."""

    def __init__(self, dates, weights, columns):
        dates = pd.DatetimeIndex(dates)
        weights = np.asarray(weights, dtype=np.float64)
        columns = tuple(columns)
        if weights.ndim != 2 or weights.shape != (len(dates), len(columns)):
            raise DataError(
                f"weights shape {weights.shape} does not match "
                f"{len(dates)} dates x {len(columns)} assets"
            )
        for row in weights:
            check_weight_vector(row, len(columns))
        self.dates = dates
        self.weights = weights
        self.columns = columns

    def __len__(self) -> int:
        return len(self.dates)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.weights, index=self.dates, columns=list(self.columns))

    def to_csv(self, path) -> None:
        frame = self.to_frame()
        frame.index.name = "date"
        frame.to_csv(Path(path), date_format="%Y-%m-%d")


def project_to_bounded_simplex(v, floor: float, cap: float) -> np.ndarray:
    """Euclidean projection onto {w : sum w = 1, floor <= w_i <= cap}.

    Solves for the shift tau in w_i = clip(v_i - tau, floor, cap). The
    coordinate sum is piecewise linear and non-increasing in tau with
    breakpoints at v_i - cap and v_i - floor, so the crossing of 1 is
    found exactly on its bracketing segment.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    if floor * n > 1.0 + 1e-12 or cap * n < 1.0 - 1e-12:
        raise ConfigError(f"bounds [{floor}, {cap}] infeasible for {n} assets")
    breakpoints = np.sort(np.concatenate([v - cap, v - floor]))
    sums = np.clip(v[None, :] - breakpoints[:, None], floor, cap).sum(axis=1)
    # feasibility brackets 1 between n*cap (left end) and n*floor (right end)
    j = int(np.searchsorted(-sums, -1.0, side="right")) - 1
    j = max(0, min(j, len(breakpoints) - 1))
    if j == len(breakpoints) - 1:
        tau = breakpoints[j]
    else:
        mid = 0.5 * (breakpoints[j] + breakpoints[j + 1])
        active = int(np.count_nonzero((v - cap < mid) & (mid < v - floor)))
        if active == 0:
            tau = breakpoints[j]
        else:
            tau = breakpoints[j] + (sums[j] - 1.0) / active
    return np.clip(v - tau, floor, cap)


def _as_return_matrix(history) -> np.ndarray:
    if isinstance(history, ReturnPanel):
        return history.values
    arr = np.asarray(history, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("return history must be 2-dimensional")
    return arr


def _sharpe_objective_and_grad(R, w):
    # f = mean(P) / std_pop(P) with P = R w; tiny floor keeps it defined
    port = R @ w
    m = port.mean()
    s = port.std()
    s = max(s, 1e-12)
    mu = R.mean(axis=0)
    centered = R - mu
    cov_w = centered.T @ (centered @ w) / len(R)
    grad = mu / s - (m / s**3) * cov_w
    return m / s, grad


def mvo_weights(history, config: MvoConfig = MvoConfig()) -> np.ndarray:
    """Maximize ex-post Sharpe over the trailing lookback window.

    Projected-gradient ascent from a uniform start plus `restarts` random
    feasible starts; the uniform solution wins objective ties so
    exchange-symmetric assets come out equal-weighted.
    """
    R_full = _as_return_matrix(history)
    if len(R_full) < config.lookback_days:
        raise DataError(
            f"history of {len(R_full)} rows shorter than lookback {config.lookback_days}"
        )
    R = R_full[-config.lookback_days :]
    n = R.shape[1]
    config.check_feasible(n)
    floor, cap = config.weight_floor, config.weight_cap

    rng = derive_rng(config.restart_seed, "mvo-restarts")
    starts = [np.full(n, 1.0 / n)]
    for _ in range(config.restarts):
        starts.append(project_to_bounded_simplex(rng.dirichlet(np.ones(n)), floor, cap))

    best_w = None
    best_obj = -np.inf
    for k, w in enumerate(starts):
        w = project_to_bounded_simplex(w, floor, cap)
        obj, grad = _sharpe_objective_and_grad(R, w)
        step = 1.0
        for _ in range(500):
            improved = False
            for _ in range(60):
                cand = project_to_bounded_simplex(w + step * grad, floor, cap)
                cand_obj, cand_grad = _sharpe_objective_and_grad(R, cand)
                if cand_obj > obj:
                    improved = True
                    break
                step *= 0.5
                if step < 1e-18:
                    break
            if not improved:
                break
            gain = cand_obj - obj
            w, obj, grad = cand, cand_obj, cand_grad
            step *= 2.0
            if gain < 1e-10:
                break
        # first start is uniform; later starts must win by a clear margin
        if best_w is None or obj > best_obj + 1e-12:
            best_w, best_obj = w, obj
    return best_w


def _quarter_key(ts: pd.Timestamp):
    return ts.year, (ts.month - 1) // 3


def mvo_schedule(returns: ReturnPanel, config: MvoConfig, test_dates) -> AllocationSeries:
    """Quarterly re-optimized weights held constant within each quarter.

    Each optimization sees the trailing lookback window of returns ending
    the trading day before the quarter's first test date.
    """
    test_dates = pd.DatetimeIndex(test_dates)
    if len(test_dates) == 0:
        raise DataError("empty test date range")
    all_dates = returns.dates
    values = returns.values
    config.check_feasible(returns.n_assets)
    weights = np.empty((len(test_dates), returns.n_assets))
    current = None
    current_quarter = None
    for i, date in enumerate(test_dates):
        key = _quarter_key(date)
        if key != current_quarter:
            history_end = all_dates.searchsorted(date)  # rows strictly before `date`
            if history_end < config.lookback_days:
                raise DataError(
                    f"only {history_end} return rows before {date.date()}, "
                    f"need {config.lookback_days}"
                )
            window = values[history_end - config.lookback_days : history_end]
            current = mvo_weights(window, config)
            current_quarter = key
        weights[i] = current
    return AllocationSeries(test_dates, weights, returns.asset_columns)


def balanced_weights(n_assets: int, dates, columns=None) -> AllocationSeries:
    """Equal weights 1/n on every date."""
    if n_assets < 1:
        raise ConfigError(f"need at least one asset, got {n_assets}")
    dates = pd.DatetimeIndex(dates)
    w = np.full(n_assets, 1.0 / n_assets)
    w /= w.sum()
    if columns is None:
        columns = tuple(f"asset_{i}" for i in range(n_assets))
    return AllocationSeries(dates, np.tile(w, (len(dates), 1)), columns)


def fixed_weights(weights, dates, columns=None) -> AllocationSeries:
    """A user-chosen simplex vector repeated on all dates."""
    w = check_weight_vector(weights)
    dates = pd.DatetimeIndex(dates)
    if columns is None:
        columns = tuple(f"asset_{i}" for i in range(w.size))
    return AllocationSeries(dates, np.tile(w, (len(dates), 1)), columns)


class MeanVarianceAllocator(BaseEstimator):
    """Dynamically re-optimized bounded mean-variance benchmark."""

    def __init__(
        self,
        lookback_days: int = 756,
        weight_floor: float = 0.1,
        weight_cap: float = 0.9,
        restarts: int = 50,
        restart_seed: int = 0,
    ):
        self.lookback_days = lookback_days
        self.weight_floor = weight_floor
        self.weight_cap = weight_cap
        self.restarts = restarts
        self.restart_seed = restart_seed

    def _config(self) -> MvoConfig:
        return MvoConfig(
            lookback_days=self.lookback_days,
            weight_floor=self.weight_floor,
            weight_cap=self.weight_cap,
            restarts=self.restarts,
            restart_seed=self.restart_seed,
        )

    def allocate(self, returns: ReturnPanel, test_dates) -> AllocationSeries:
        return mvo_schedule(returns, self._config(), test_dates)


class BalancedAllocator(BaseEstimator):
    """Equal-weight benchmark."""

    def allocate(self, returns: ReturnPanel, test_dates) -> AllocationSeries:
        return balanced_weights(returns.n_assets, test_dates, returns.asset_columns)


class FixedWeightAllocator(BaseEstimator):
    """Constant user-specified weights."""

    def __init__(self, weights=None):
        self.weights = weights

    def allocate(self, returns: ReturnPanel, test_dates) -> AllocationSeries:
        if self.weights is None:
            raise ConfigError("fixed-weight allocator needs a weight vector")
        w = check_weight_vector(self.weights, returns.n_assets)
        return fixed_weights(w, test_dates, returns.asset_columns)
