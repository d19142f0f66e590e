"""Portfolio performance metrics.

Conventions, applied uniformly so optimized and reported quantities agree:
252 trading days per year, population (1/N) standard deviation, zero
risk-free rate, daily simple returns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DataError, NumericalError
from .validation import as_float_array

TRADING_DAYS = 252
ANNUALIZER = math.sqrt(TRADING_DAYS)

# Row labels for serialized metric tables, in report order.
METRIC_LABELS = {
    "cumulative_return": "Cumulative Return",
    "annual_return": "Annual Return",
    "annual_volatility": "Annual Volatility",
    "sharpe": "Sharpe Ratio",
    "downside_deviation": "Downside Deviation",
    "sortino": "Sortino",
    "max_drawdown": "Max Drawdown",
    "pct_positive": "% of + Return",
    "avg_profit_over_avg_loss": "Ave P/Ave L",
}


def _returns(r, min_obs: int = 1) -> np.ndarray:
    arr = as_float_array(r, "returns", ndim=1)
    if arr.size < min_obs:
        raise DataError(f"need at least {min_obs} return observations, got {arr.size}")
    return arr


def sharpe(returns, risk_free: float = 0.0) -> float:
    """Annualized Sharpe ratio: mean excess return over population std, times sqrt(252)."""
    r = _returns(returns, min_obs=2) - risk_free
    sd = r.std()
    if sd == 0.0:
        raise NumericalError("Sharpe ratio undefined: zero return variance")
    return float(r.mean() / sd * ANNUALIZER)


def cumulative_return(returns) -> float:
    """Total compounded return over the series."""
    r = _returns(returns)
    if np.any(r <= -1.0):
        raise DataError("returns must be greater than -1")
    return float(np.prod(1.0 + r) - 1.0)


def annualized_return(returns) -> float:
    """Geometric annualization of the compounded return."""
    r = _returns(returns)
    return float((1.0 + cumulative_return(r)) ** (TRADING_DAYS / r.size) - 1.0)


def annualized_volatility(returns) -> float:
    """Population std of daily returns times sqrt(252)."""
    r = _returns(returns, min_obs=2)
    return float(r.std() * ANNUALIZER)


def downside_deviation(returns, target: float = 0.0) -> float:
    """Annualized root-mean-square of below-target returns, full-series denominator."""
    r = _returns(returns)
    shortfall = np.minimum(r - target, 0.0)
    return float(np.sqrt(np.mean(shortfall**2)) * ANNUALIZER)


def sortino(returns) -> float:
    """Annualized return over downside deviation."""
    dd = downside_deviation(returns)
    if dd == 0.0:
        raise NumericalError("Sortino ratio undefined: zero downside deviation")
    return float(annualized_return(returns) / dd)


def max_drawdown(returns) -> float:
    """Largest peak-to-trough decline of the compounded wealth path, as a positive fraction."""
    r = _returns(returns)
    if np.any(r <= -1.0):
        raise DataError("returns must be greater than -1")
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + r)])
    peaks = np.maximum.accumulate(wealth)
    return float(np.max(1.0 - wealth / peaks))


def pct_positive(returns) -> float:
    """Fraction of days with strictly positive return."""
    r = _returns(returns)
    return float(np.mean(r > 0.0))


def avg_profit_over_avg_loss(returns) -> float:
    """Mean positive return over the magnitude of the mean negative return."""
    r = _returns(returns)
    gains = r[r > 0.0]
    losses = r[r < 0.0]
    if gains.size == 0 or losses.size == 0:
        raise NumericalError("profit/loss ratio needs at least one gain and one loss")
    return float(gains.mean() / abs(losses.mean()))


@dataclass(frozen=True)
class MetricTable:
    """The nine-metric summary of a daily return series."""

    cumulative_return: float
    annual_return: float
    annual_volatility: float
    sharpe: float
    downside_deviation: float
    sortino: float
    max_drawdown: float
    pct_positive: float
    avg_profit_over_avg_loss: float

    def to_dict(self) -> dict[str, float]:
        """Values keyed by report row label, in row order."""
        return {METRIC_LABELS[f.name]: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        lines = ["metric,value"]
        lines += [f"{label},{value:.10g}" for label, value in self.to_dict().items()]
        return "\n".join(lines) + "\n"


def metric_table(returns) -> MetricTable:
    """Compute all nine metrics; guard-protected ratios come back NaN when undefined."""
    r = _returns(returns, min_obs=2)
    values = {}
    for name, fn in [
        ("cumulative_return", cumulative_return),
        ("annual_return", annualized_return),
        ("annual_volatility", annualized_volatility),
        ("sharpe", sharpe),
        ("downside_deviation", downside_deviation),
        ("sortino", sortino),
        ("max_drawdown", max_drawdown),
        ("pct_positive", pct_positive),
        ("avg_profit_over_avg_loss", avg_profit_over_avg_loss),
    ]:
        try:
            values[name] = fn(r)
        except NumericalError:
            values[name] = float("nan")
    return MetricTable(**values)


@dataclass(frozen=True)
class RollingSharpeSeries:
    """Annualized Sharpe over a trailing window, per date.

    ``values`` holds NaN where a window had zero return variance; comparison
    statistics drop those entries.
    """

    dates: np.ndarray | None
    values: np.ndarray
    window: int

    def __len__(self) -> int:
        return len(self.values)

    def restrict(self, start) -> "RollingSharpeSeries":
        """Slice to dates at or after ``start`` (requires dates)."""
        if self.dates is None:
            raise DataError("cannot restrict a rolling series without dates")
        keep = self.dates >= start
        return RollingSharpeSeries(self.dates[keep], self.values[keep], self.window)


def rolling_sharpe(returns, window: int = TRADING_DAYS, dates=None) -> RollingSharpeSeries:
    """Sharpe ratio over every trailing window of the given length."""
    r = _returns(returns)
    if r.size < window:
        raise DataError(f"series length {r.size} is shorter than window {window}")
    if window < 2:
        raise DataError("rolling window must cover at least 2 observations")
    windows = np.lib.stride_tricks.sliding_window_view(r, window)
    means = windows.mean(axis=1)
    stds = windows.std(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(stds > 0.0, means / stds * ANNUALIZER, np.nan)
    if dates is not None:
        dates = np.asarray(dates)
        if dates.size != r.size:
            raise DataError("dates must match the return series length")
        dates = dates[window - 1 :]
    return RollingSharpeSeries(dates, values, window)
