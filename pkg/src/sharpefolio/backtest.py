"""Walk-forward backtesting: biennial retraining, daily weights, cost netting.

The timing convention throughout: weights decided from data through day t
earn day t+1's asset returns. Costs are charged on the change in target
weights between consecutive decision days.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import clone

from .benchmarks import AllocationSeries
from .errors import ConfigError, DataError
from .metrics import (
    TRADING_DAYS,
    MetricTable,
    RollingSharpeSeries,
    metric_table,
    rolling_sharpe,
)
from .panels import PricePanel, ReturnPanel, build_windows, model_features, simple_returns
from .rng import derive_rng
from .stats import (
    TestResult,
    mann_whitney_u,
    outperformance_fraction,
    paired_valid_values,
    z_test_one_sample,
    z_test_two_sample,
)
from .training import train

__all__ = [
    "WalkForwardSchedule",
    "BacktestReport",
    "ComparisonReport",
    "ReplicateResult",
    "make_schedule",
    "run_strategy",
    "compare",
    "replicate_runs",
]

DEFAULT_COST_RATE = 0.0001
DEFAULT_ZOOM_START = pd.Timestamp("2020-05-01")


@dataclass(frozen=True)
class WalkForwardSchedule:
    """Ordered (train_start, train_end, test_start, test_end) segments.

    Expanding window: every segment trains from the common data start
    through the day before its own test window. Test windows tile the
    evaluation period with no calendar gaps or overlaps.
    """

    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise ConfigError("schedule has no segments")
        start = self.segments[0][0]
        for k, (train_start, train_end, test_start, test_end) in enumerate(self.segments):
            if train_start != start:
                raise ConfigError("train_start must be fixed across segments")
            if not (train_end < test_start <= test_end):
                raise ConfigError(f"segment {k} dates out of order")
            if k > 0:
                prev_end = self.segments[k - 1][3]
                if test_start != prev_end + pd.Timedelta(days=1):
                    raise ConfigError(
                        f"segment {k} leaves a gap or overlap after {prev_end.date()}"
                    )

    def __iter__(self):
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def test_start(self) -> pd.Timestamp:
        return self.segments[0][2]

    @property
    def test_end(self) -> pd.Timestamp:
        return self.segments[-1][3]


def make_schedule(data_start, first_test, end, retrain_every: int = 2) -> WalkForwardSchedule:
    """Calendar-year segments of `retrain_every` years, final one clipped."""
    data_start = pd.Timestamp(data_start)
    first_test = pd.Timestamp(first_test)
    end = pd.Timestamp(end)
    if retrain_every < 1:
        raise ConfigError(f"retraining period must be at least 1 year, got {retrain_every}")
    if not data_start < first_test:
        raise ConfigError(f"data start {data_start.date()} must precede first test {first_test.date()}")
    if not first_test <= end:
        raise ConfigError(f"empty test range: {first_test.date()} to {end.date()}")
    segments = []
    k = 0
    while True:
        year = first_test.year + retrain_every * k
        test_start = max(first_test, pd.Timestamp(year=year, month=1, day=1))
        if test_start > end:
            break
        boundary = pd.Timestamp(year=year + retrain_every, month=1, day=1)
        test_end = min(end, boundary - pd.Timedelta(days=1))
        train_end = test_start - pd.Timedelta(days=1)
        segments.append((data_start, train_end, test_start, test_end))
        if test_end == end:
            break
        k += 1
    return WalkForwardSchedule(tuple(segments))


@dataclass(frozen=True)
class BacktestReport:
    """Daily accounting of one strategy across the evaluation period."""

    gross_returns: pd.Series
    net_returns: pd.Series
    costs: pd.Series
    turnover: pd.Series
    allocations: AllocationSeries
    metrics: MetricTable
    rolling_sharpe: RollingSharpeSeries | None

    def __post_init__(self):
        if (self.costs.values < 0.0).any():
            raise DataError("negative transaction cost")
        if (self.turnover.values < -1e-12).any() or (self.turnover.values > 2.0 + 1e-12).any():
            raise DataError("turnover outside [0, 2]; weights left the simplex")
        residual = np.max(np.abs(self.net_returns.values - (self.gross_returns.values - self.costs.values)))
        if residual > 1e-15:
            raise DataError("net returns are not gross minus cost")

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.net_returns.index

    def cumulative_net(self) -> float:
        return float(np.prod(1.0 + self.net_returns.values))

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "metrics.csv").write_text(self.metrics.to_csv(), encoding="utf-8")
        lines = ["date,gross,net,cost"]
        for date, gross, net, cost in zip(
            self.dates, self.gross_returns.values, self.net_returns.values, self.costs.values
        ):
            lines.append(f"{pd.Timestamp(date).date()},{gross:.17g},{net:.17g},{cost:.17g}")
        (directory / "returns.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.allocations.to_csv(directory / "weights.csv")
        if self.rolling_sharpe is not None:
            lines = ["date,rolling_sharpe"]
            for date, value in zip(self.rolling_sharpe.dates, self.rolling_sharpe.values):
                lines.append(f"{pd.Timestamp(date).date()},{value:.17g}")
            (directory / "rolling_sharpe.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _segment_seed(base_seed: int, *labels) -> int:
    return int(derive_rng(base_seed, *labels).integers(2**63))


def _feature_frame(panel: PricePanel, returns: ReturnPanel, features: str) -> pd.DataFrame:
    if features == "returns":
        return returns.frame
    if features == "model":
        return model_features(panel)
    raise ConfigError(f"unknown feature layout {features!r}; use 'returns' or 'model'")


def _neural_weights(
    allocator,
    panel: PricePanel,
    returns: ReturnPanel,
    schedule: WalkForwardSchedule,
    decision_dates: pd.DatetimeIndex,
    features: str,
    seed: int,
    pretrain: PricePanel | None,
) -> np.ndarray:
    lookback = getattr(allocator, "lookback", None)
    if lookback is None:
        raise ConfigError(
            f"{type(allocator).__name__} has neither allocate() nor a lookback; "
            "it cannot drive a backtest"
        )
    frame = _feature_frame(panel, returns, features)
    windows = build_windows(frame, returns, lookback)
    decisions = np.asarray(returns.dates)[lookback - 1 : len(returns.dates) - 1]

    phase1_params = None
    if pretrain is not None:
        proxy_returns = simple_returns(pretrain)
        proxy_frame = _feature_frame(pretrain, proxy_returns, features)
        proxy_windows = build_windows(proxy_frame, proxy_returns, lookback)
        phase1 = clone(allocator)
        phase1.set_params(seed=_segment_seed(seed, "pretrain"))
        phase1_params, _ = train(phase1, proxy_windows, phase1.train_config())

    out = np.full((len(decision_dates), returns.n_assets), np.nan)
    positions = decisions.searchsorted(np.asarray(decision_dates))
    if (positions >= len(decisions)).any() or (decisions[positions] != np.asarray(decision_dates)).any():
        raise DataError(
            "insufficient lookback history: the panel does not provide a full "
            "window for every scheduled test day"
        )
    for k, (train_start, train_end, test_start, test_end) in enumerate(schedule):
        train_idx = np.flatnonzero(windows.target_dates <= train_end.to_datetime64())
        if train_idx.size == 0:
            raise DataError(
                f"no training samples before {test_start.date()}; "
                "extend the panel or shorten the lookback"
            )
        estimator = clone(allocator)
        estimator.set_params(seed=_segment_seed(seed, "segment", k))
        train_ds = windows.take(train_idx)
        if phase1_params is None:
            estimator.fit(train_ds)
        else:
            # every segment fine-tunes from the shared phase-1 parameters
            params, log = train(
                estimator,
                train_ds,
                estimator.train_config(),
                initial_params=phase1_params.copy(),
            )
            estimator.params_ = params
            estimator.train_log_ = log
            estimator.n_features_ = train_ds.n_features
            estimator.n_assets_ = train_ds.n_assets
        in_segment = np.flatnonzero(
            (decision_dates >= test_start) & (decision_dates <= test_end)
        )
        if in_segment.size == 0:
            continue
        out[in_segment] = estimator.predict(windows.X[positions[in_segment]])
    if np.isnan(out).any():
        raise DataError("schedule left some test days without weights")
    return out


def run_strategy(
    allocator,
    panel: PricePanel,
    schedule: WalkForwardSchedule,
    cost_rate: float = DEFAULT_COST_RATE,
    *,
    features: str = "returns",
    seed: int = 0,
    rolling_window: int = TRADING_DAYS,
    pretrain: PricePanel | None = None,
) -> BacktestReport:
    """Backtest one allocator over the schedule's evaluation period.

    Benchmarks produce weights from their own internal schedules; neural
    allocators retrain per segment on the expanding training range with a
    seed derived from (seed, segment). Weights on day t are applied to
    day t+1 returns; the final panel date therefore decides nothing.
    """
    if cost_rate < 0.0:
        raise ConfigError(f"cost rate must be nonnegative, got {cost_rate}")
    returns = simple_returns(panel)
    dates = returns.dates
    mask = (dates >= schedule.test_start) & (dates <= schedule.test_end)
    idx = np.flatnonzero(mask)
    idx = idx[idx < len(dates) - 1]  # day t needs a day t+1 return to earn
    if idx.size == 0:
        raise DataError(
            f"no evaluable test days between {schedule.test_start.date()} "
            f"and {schedule.test_end.date()}"
        )
    decision_dates = dates[idx]
    next_returns = returns.values[idx + 1]

    if hasattr(allocator, "allocate"):
        allocations = allocator.allocate(returns, decision_dates)
        weights = allocations.weights
    else:
        weights = _neural_weights(
            allocator, panel, returns, schedule, decision_dates, features, seed, pretrain
        )
        allocations = AllocationSeries(decision_dates, weights, returns.asset_columns)

    gross = (weights * next_returns).sum(axis=1)
    turnover = np.concatenate(
        [[0.0], np.abs(np.diff(weights, axis=0)).sum(axis=1)]  # w_{-1} taken as w_0
    )
    costs = cost_rate * turnover
    net = gross - costs
    rolling = None
    if len(net) >= rolling_window:
        rolling = rolling_sharpe(net, rolling_window, dates=decision_dates)
    return BacktestReport(
        gross_returns=pd.Series(gross, index=decision_dates, name="gross"),
        net_returns=pd.Series(net, index=decision_dates, name="net"),
        costs=pd.Series(costs, index=decision_dates, name="cost"),
        turnover=pd.Series(turnover, index=decision_dates, name="turnover"),
        allocations=allocations,
        metrics=metric_table(net),
        rolling_sharpe=rolling,
    )


def _json_safe(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


@dataclass(frozen=True)
class ComparisonReport:
    """Pairwise strategy comparison against a named baseline."""

    baseline: str
    strategies: dict
    metrics: dict
    zoom_start: pd.Timestamp | None

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "zoom_start": str(self.zoom_start.date()) if self.zoom_start is not None else None,
            "strategies": self.strategies,
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _comparison_block(series, base_series) -> dict:
    a, b = paired_valid_values(series, base_series)
    if a.size == 0:
        raise DataError("no overlapping valid rolling-Sharpe dates to compare")
    test = mann_whitney_u(a, b)
    return {
        "mann_whitney": {k: _json_safe(v) for k, v in test.to_dict().items()},
        "outperformance": outperformance_fraction(series, base_series),
    }


def compare(reports: dict, baseline: str, zoom_start=None) -> ComparisonReport:
    """Rolling-Sharpe rank tests, outperformance fractions, and side-by-side
    metrics for a set of reports sharing one evaluation calendar."""
    if baseline not in reports:
        raise ConfigError(f"baseline {baseline!r} is not among {list(reports)}")
    if len(reports) < 2:
        raise ConfigError("need at least two reports to compare")
    names = list(reports)
    base_report = reports[baseline]
    for name, report in reports.items():
        if not report.dates.equals(base_report.dates):
            raise DataError(f"report {name!r} is on a different calendar than the baseline")
        if report.rolling_sharpe is None:
            raise DataError(
                f"report {name!r} has no rolling-Sharpe series; "
                "the evaluation period is shorter than the rolling window"
            )
    zoom = pd.Timestamp(zoom_start) if zoom_start is not None else None

    strategies = {}
    for name in names:
        series = reports[name].rolling_sharpe
        entry = {"mean_rolling_sharpe": _json_safe(float(np.nanmean(series.values)))}
        if name != baseline:
            entry["full_period"] = _comparison_block(series, base_report.rolling_sharpe)
            if zoom is not None:
                entry["zoom"] = _comparison_block(
                    series.restrict(zoom), base_report.rolling_sharpe.restrict(zoom)
                )
        strategies[name] = entry

    metric_rows = {}
    for label in next(iter(reports.values())).metrics.to_dict():
        metric_rows[label] = {
            name: _json_safe(reports[name].metrics.to_dict()[label]) for name in names
        }
    return ComparisonReport(
        baseline=baseline, strategies=strategies, metrics=metric_rows, zoom_start=zoom
    )


@dataclass(frozen=True)
class ReplicateResult:
    """Seeded repeat backtests of one configuration plus the mean test."""

    reports: tuple
    sharpes: np.ndarray
    test: TestResult | None


def _replicate_worker(args):
    allocator, panel, schedule, cost_rate, features, seed, rolling_window, pretrain = args
    return run_strategy(
        allocator,
        panel,
        schedule,
        cost_rate,
        features=features,
        seed=seed,
        rolling_window=rolling_window,
        pretrain=pretrain,
    )


def replicate_runs(
    allocator,
    panel: PricePanel,
    schedule: WalkForwardSchedule,
    n_runs: int = 30,
    base_seed: int = 0,
    cost_rate: float = DEFAULT_COST_RATE,
    *,
    features: str = "returns",
    reference=None,
    jobs: int = 1,
    rolling_window: int = TRADING_DAYS,
    pretrain: PricePanel | None = None,
) -> ReplicateResult:
    """Independent seeded runs; optional z-test of mean Sharpe vs a reference.

    The reference may be a second sample of per-run Sharpes (two-sample
    Welch z) or a single reported mean (one-sample z). Results do not
    depend on the job count; replica k always uses the seed derived from
    (base_seed, "replica", k).
    """
    if n_runs < 2:
        raise ConfigError(f"replicate protocol needs at least 2 runs, got {n_runs}")
    if jobs < 1:
        raise ConfigError(f"job count must be positive, got {jobs}")
    tasks = [
        (
            allocator,
            panel,
            schedule,
            cost_rate,
            features,
            _segment_seed(base_seed, "replica", k),
            rolling_window,
            pretrain,
        )
        for k in range(n_runs)
    ]
    if jobs == 1:
        reports = [_replicate_worker(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_replicate_worker, tasks))
    sharpes = np.array([report.metrics.sharpe for report in reports])
    test = None
    if reference is not None:
        if np.ndim(reference) == 0:
            test = z_test_one_sample(sharpes, float(reference))
        else:
            test = z_test_two_sample(sharpes, np.asarray(reference, dtype=np.float64))
    return ReplicateResult(tuple(reports), sharpes, test)
