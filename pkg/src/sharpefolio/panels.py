"""Load, align, transform, and window daily financial time series.

CSV files come in one series-group per file (Yahoo-style asset prices,
FRED-style indicator levels). Files are loaded individually, aligned onto
a master trading calendar with forward/backward filling, and windowed
into (lookback x features) samples paired with next-day asset returns.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .metrics import TRADING_DAYS

__all__ = [
    "PricePanel",
    "ReturnPanel",
    "WindowedDataset",
    "load_csv",
    "trading_calendar",
    "align_and_fill",
    "simple_returns",
    "yoy_percent_change",
    "rolling_volatility",
    "model_features",
    "build_windows",
    "chronological_split",
]


def _as_datetime_index(values, what: str) -> pd.DatetimeIndex:
    try:
        index = pd.DatetimeIndex(values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{what}: dates not parseable: {exc}") from None
    if index.has_duplicates:
        dupes = index[index.duplicated()].unique()
        raise DataError(f"{what}: duplicate dates {list(dupes[:3])}")
    return index


class PricePanel:
    """Aligned daily panel of asset close prices plus optional indicators.

    Immutable by convention: operations return new panels. Dates are
    strictly increasing with no gaps in the sense that every retained
    column has exactly one value per date.
    """

    def __init__(self, frame: pd.DataFrame, asset_columns, feature_columns=()):
        asset_columns = tuple(asset_columns)
        feature_columns = tuple(feature_columns)
        ordered = [*asset_columns, *feature_columns]
        if len(set(ordered)) != len(ordered):
            raise DataError(f"panel columns not unique: {ordered}")
        missing = [c for c in ordered if c not in frame.columns]
        if missing:
            raise DataError(f"panel columns missing from frame: {missing}")
        index = _as_datetime_index(frame.index, "panel")
        if not index.is_monotonic_increasing:
            order = np.argsort(index.values, kind="mergesort")
            frame = frame.iloc[order]
            index = index[order]
        frame = frame[ordered].astype(np.float64)
        frame.index = index
        if frame.isna().any().any():
            bad = [c for c in ordered if frame[c].isna().any()]
            raise DataError(f"panel has missing values in columns {bad}")
        self.frame = frame
        self.asset_columns = asset_columns
        self.feature_columns = feature_columns

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.frame.index

    @property
    def n_assets(self) -> int:
        return len(self.asset_columns)

    def __len__(self) -> int:
        return len(self.frame)

    def asset_prices(self) -> pd.DataFrame:
        return self.frame[list(self.asset_columns)]

    def indicators(self) -> pd.DataFrame:
        return self.frame[list(self.feature_columns)]

    def restrict(self, start=None, end=None) -> "PricePanel":
        """Rows with start <= date <= end (either bound optional)."""
        sub = self.frame.loc[start:end]
        if sub.empty:
            raise DataError(f"no panel rows between {start} and {end}")
        return PricePanel(sub, self.asset_columns, self.feature_columns)


class ReturnPanel:
    """Per-asset simple daily returns, one row shorter than the source."""

    def __init__(self, frame: pd.DataFrame):
        index = _as_datetime_index(frame.index, "returns")
        if not index.is_monotonic_increasing:
            raise DataError("return dates out of order")
        frame = frame.astype(np.float64)
        frame.index = index
        if frame.isna().any().any():
            raise DataError("return panel has missing values")
        if (frame.values <= -1.0).any():
            raise DataError("returns at or below -100% are not representable")
        self.frame = frame

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.frame.index

    @property
    def asset_columns(self):
        return tuple(self.frame.columns)

    @property
    def n_assets(self) -> int:
        return self.frame.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.frame.values

    def __len__(self) -> int:
        return len(self.frame)

    def restrict(self, start=None, end=None) -> "ReturnPanel":
        sub = self.frame.loc[start:end]
        if sub.empty:
            raise DataError(f"no return rows between {start} and {end}")
        return ReturnPanel(sub)


def load_csv(path, schema, *, kind: str = "asset") -> PricePanel:
    """Read one CSV into a single-group panel.

    schema maps internal column names to CSV headers and must contain the
    reserved key "date". kind selects the column class of the loaded
    series: "asset" (strictly positive close prices) or "indicator"
    (exogenous levels, sign unrestricted).
    """
    if kind not in ("asset", "indicator"):
        raise ConfigError(f"unknown column kind {kind!r}")
    if "date" not in schema:
        raise ConfigError('schema must map the reserved key "date"')
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    raw = pd.read_csv(path)
    for internal, header in schema.items():
        if header not in raw.columns:
            raise DataError(f"{path.name}: column {header!r} (for {internal!r}) not found")
    try:
        dates = pd.to_datetime(raw[schema["date"]], format="ISO8601")
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path.name}: unparseable date: {exc}") from None
    data = {}
    for internal, header in schema.items():
        if internal == "date":
            continue
        try:
            col = pd.to_numeric(raw[header], errors="raise")
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path.name}: column {header!r} not numeric: {exc}") from None
        if col.isna().any():
            row = int(col.index[col.isna()][0])
            raise DataError(f"{path.name}: column {header!r} missing value at row {row}")
        data[internal] = col.to_numpy(dtype=np.float64)
    frame = pd.DataFrame(data, index=_as_datetime_index(dates, path.name))
    frame = frame.sort_index()
    names = tuple(data)
    if kind == "asset":
        for name in names:
            if (frame[name] <= 0.0).any():
                raise DataError(f"{path.name}: non-positive price in column {name!r}")
        return PricePanel(frame, asset_columns=names)
    return PricePanel(frame, asset_columns=(), feature_columns=names)


def trading_calendar(panels) -> pd.DatetimeIndex:
    """Union of the panels' dates: the master trading-day calendar."""
    panels = list(panels)
    if not panels:
        raise DataError("no panels given")
    calendar = panels[0].dates
    for panel in panels[1:]:
        calendar = calendar.union(panel.dates)
    return calendar


def align_and_fill(panels, calendar) -> PricePanel:
    """Reindex every column of every panel onto the master calendar.

    Interior and trailing gaps take the last observation before them,
    including observations dated off-calendar (a monthly print on a
    weekend still propagates forward). Leading gaps take the first
    observation. Column order follows the panel order.
    """
    panels = list(panels)
    if not panels:
        raise DataError("no panels given")
    calendar = _as_datetime_index(calendar, "calendar")
    if len(calendar) == 0:
        raise DataError("empty master calendar")
    if not calendar.is_monotonic_increasing:
        calendar = calendar.sort_values()
    columns = {}
    assets = []
    features = []
    for panel in panels:
        if len(panel) == 0 or panel.dates[0] > calendar[-1] or panel.dates[-1] < calendar[0]:
            raise DataError(
                f"panel columns {list(panel.frame.columns)} do not overlap the calendar"
            )
        for name in panel.frame.columns:
            if name in columns:
                raise DataError(f"column {name!r} appears in more than one panel")
            series = panel.frame[name].dropna()
            if series.empty:
                raise DataError(f"column {name!r} has no observations")
            # union first so off-calendar observations still feed the fill
            merged = series.reindex(calendar.union(series.index)).ffill()
            columns[name] = merged.reindex(calendar).bfill()
            (assets if name in panel.asset_columns else features).append(name)
    frame = pd.DataFrame(columns, index=calendar)
    return PricePanel(frame, asset_columns=assets, feature_columns=features)


def simple_returns(panel: PricePanel) -> ReturnPanel:
    """r_{t,i} = p_{t,i} / p_{t-1,i} - 1 over the asset columns."""
    if len(panel) < 2:
        raise DataError("need at least 2 rows to compute returns")
    prices = panel.asset_prices()
    if (prices.values <= 0.0).any():
        raise DataError("non-positive price; returns undefined")
    values = prices.values
    rets = values[1:] / values[:-1] - 1.0
    frame = pd.DataFrame(rets, index=panel.dates[1:], columns=list(panel.asset_columns))
    return ReturnPanel(frame)


def yoy_percent_change(series: pd.Series, period: int) -> pd.Series:
    """(x_t / x_{t-period} - 1) * 100 with the first `period` entries dropped."""
    if period < 1:
        raise ConfigError(f"period must be positive, got {period}")
    series = pd.Series(series, dtype=np.float64)
    if len(series) <= period:
        raise DataError(f"series of length {len(series)} too short for period {period}")
    if (series.values <= 0.0).any():
        raise DataError("year-over-year change needs strictly positive levels")
    out = (series / series.shift(period) - 1.0) * 100.0
    return out.iloc[period:]


def rolling_volatility(prices: pd.Series, window: int = 30) -> pd.Series:
    """Annualized rolling population std of daily returns.

    Value at date t is std over the `window` returns ending at t, times
    sqrt(252). Output has len(prices) - window entries.
    """
    prices = pd.Series(prices, dtype=np.float64)
    if window < 2:
        raise ConfigError(f"window must be at least 2, got {window}")
    if len(prices) <= window:
        raise DataError(f"series of length {len(prices)} too short for window {window}")
    if (prices.values <= 0.0).any():
        raise DataError("non-positive price; returns undefined")
    rets = prices.values[1:] / prices.values[:-1] - 1.0
    windows = np.lib.stride_tricks.sliding_window_view(rets, window)
    vol = windows.std(axis=1) * math.sqrt(TRADING_DAYS)
    return pd.Series(vol, index=prices.index[window:])


def model_features(panel: PricePanel) -> pd.DataFrame:
    """Per-date model inputs: asset prices, asset returns, indicators.

    Rows align with the return dates (the panel's first date is consumed
    by the return computation). Four assets with no indicators give the
    eight-feature price-and-return layout.
    """
    rets = simple_returns(panel)
    prices = panel.asset_prices().iloc[1:]
    blocks = [
        prices.rename(columns={c: f"{c}_price" for c in prices.columns}),
        rets.frame.rename(columns={c: f"{c}_return" for c in rets.frame.columns}),
    ]
    if panel.feature_columns:
        blocks.append(panel.indicators().iloc[1:])
    return pd.concat(blocks, axis=1)


@dataclass
class WindowedDataset:
    """Overlapping lookback windows paired with next-day return targets."""

    X: np.ndarray  # (samples, lookback, features)
    y: np.ndarray  # (samples, assets)
    target_dates: np.ndarray
    lookback: int

    def __post_init__(self):
        if self.X.ndim != 3 or self.y.ndim != 2:
            raise DataError("windowed arrays have wrong rank")
        if not (len(self.X) == len(self.y) == len(self.target_dates)):
            raise DataError("window/target lengths disagree")
        if self.X.shape[1] != self.lookback:
            raise DataError(
                f"window span {self.X.shape[1]} does not match lookback {self.lookback}"
            )

    def __len__(self) -> int:
        return len(self.X)

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    @property
    def n_assets(self) -> int:
        return self.y.shape[1]

    def take(self, indices) -> "WindowedDataset":
        return WindowedDataset(
            self.X[indices], self.y[indices], self.target_dates[indices], self.lookback
        )


def build_windows(features, targets: ReturnPanel, lookback: int) -> WindowedDataset:
    """Stride-1 windows: sample k covers feature rows [k, k+lookback) and
    targets the returns at row k+lookback."""
    if lookback < 1:
        raise ConfigError(f"lookback must be positive, got {lookback}")
    if isinstance(features, pd.DataFrame):
        if not features.index.equals(targets.dates):
            raise DataError("feature rows and return rows are not date-aligned")
        values = features.values.astype(np.float64)
    else:
        values = np.asarray(features, dtype=np.float64)
        if values.ndim != 2:
            raise DataError("feature matrix must be 2-dimensional")
        if len(values) != len(targets):
            raise DataError(
                f"{len(values)} feature rows vs {len(targets)} return rows"
            )
    rows = len(values)
    if rows <= lookback:
        raise DataError(f"{rows} rows cannot fill a {lookback}-day lookback plus target")
    windows = np.lib.stride_tricks.sliding_window_view(values, lookback, axis=0)
    X = np.moveaxis(windows, -1, 1)[: rows - lookback].copy()
    y = targets.values[lookback:].copy()
    dates = np.asarray(targets.dates)[lookback:]
    return WindowedDataset(X, y, dates, lookback)


def chronological_split(dataset: WindowedDataset, validation_fraction: float = 0.10):
    """Final ceil(fraction * N) samples become validation, rest train."""
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    if not 0.0 < validation_fraction < 1.0:
        raise ConfigError(
            f"validation fraction must lie in (0, 1), got {validation_fraction}"
        )
    n = len(dataset)
    # epsilon guards the ceiling against 0.1 * 10 = 1.0000000000000002
    n_val = max(1, int(math.ceil(validation_fraction * n - 1e-9)))
    split = n - n_val
    return dataset.take(slice(0, split)), dataset.take(slice(split, n))
