import math

import numpy as np
import pandas as pd
import pytest

from sharpefolio import panels
from sharpefolio.errors import ConfigError, DataError


def make_panel(prices, assets=None, start="2020-01-02", features=None):
    prices = np.asarray(prices, dtype=float)
    assets = assets or [f"a{i}" for i in range(prices.shape[1])]
    index = pd.bdate_range(start, periods=len(prices))
    frame = pd.DataFrame(prices, index=index, columns=assets)
    feature_names = ()
    if features is not None:
        for name, vals in features.items():
            frame[name] = vals
        feature_names = tuple(features)
    return panels.PricePanel(frame, asset_columns=assets, feature_columns=feature_names)


class TestLoadCsv:
    def test_three_row_identity(self, tmp_path):
        p = tmp_path / "px.csv"
        p.write_text("Date,Close\n2020-01-02,10.0\n2020-01-03,10.5\n2020-01-06,11.0\n")
        panel = panels.load_csv(p, {"date": "Date", "stock": "Close"})
        assert len(panel) == 3
        assert panel.asset_columns == ("stock",)
        assert panel.frame["stock"].tolist() == [10.0, 10.5, 11.0]

    def test_duplicate_date_rejected(self, tmp_path):
        p = tmp_path / "px.csv"
        p.write_text("Date,Close\n2020-01-02,10\n2020-01-02,11\n")
        with pytest.raises(DataError, match="duplicate"):
            panels.load_csv(p, {"date": "Date", "stock": "Close"})

    def test_out_of_order_rows_sorted(self, tmp_path):
        p = tmp_path / "px.csv"
        p.write_text("Date,Close\n2020-01-06,11\n2020-01-02,10\n2020-01-03,10.5\n")
        panel = panels.load_csv(p, {"date": "Date", "stock": "Close"})
        assert panel.frame["stock"].tolist() == [10.0, 10.5, 11.0]
        assert panel.dates.is_monotonic_increasing

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            panels.load_csv(tmp_path / "absent.csv", {"date": "Date", "x": "Close"})

    def test_missing_column(self, tmp_path):
        p = tmp_path / "px.csv"
        p.write_text("Date,Close\n2020-01-02,10\n")
        with pytest.raises(DataError, match="Adj Close"):
            panels.load_csv(p, {"date": "Date", "stock": "Adj Close"})

    def test_non_positive_price(self, tmp_path):
        p = tmp_path / "px.csv"
        p.write_text("Date,Close\n2020-01-02,10\n2020-01-03,0\n")
        with pytest.raises(DataError, match="non-positive"):
            panels.load_csv(p, {"date": "Date", "stock": "Close"})

    def test_unparseable_value_rejected_not_dropped(self, tmp_path):
        p = tmp_path / "px.csv"
        p.write_text("Date,Close\n2020-01-02,10\n2020-01-03,n/a\n")
        with pytest.raises(DataError):
            panels.load_csv(p, {"date": "Date", "stock": "Close"})

    def test_indicator_kind_allows_negative_levels(self, tmp_path):
        p = tmp_path / "spread.csv"
        p.write_text("DATE,T10Y2Y\n2020-01-02,-0.15\n2020-02-03,0.2\n")
        panel = panels.load_csv(p, {"date": "DATE", "curve": "T10Y2Y"}, kind="indicator")
        assert panel.feature_columns == ("curve",)
        assert panel.asset_columns == ()


class TestAlignAndFill:
    def test_monthly_value_forward_fills_whole_calendar(self):
        calendar = pd.bdate_range("2020-03-02", periods=21)
        monthly = panels.PricePanel(
            pd.DataFrame({"cpi": [5.0]}, index=[calendar[0]]),
            asset_columns=(),
            feature_columns=("cpi",),
        )
        combined = panels.align_and_fill([monthly], calendar)
        assert len(combined) == 21
        assert (combined.frame["cpi"] == 5.0).all()

    def test_already_aligned_unchanged(self):
        panel = make_panel(np.linspace(10, 12, 21).reshape(-1, 1))
        out = panels.align_and_fill([panel], panel.dates)
        pd.testing.assert_frame_equal(out.frame, panel.frame)

    def test_leading_gap_backfilled(self):
        calendar = pd.bdate_range("2020-03-02", periods=21)
        late = panels.PricePanel(
            pd.DataFrame({"x": [7.0, 8.0]}, index=calendar[9:11]),
            asset_columns=("x",),
        )
        out = panels.align_and_fill([late], calendar)
        assert (out.frame["x"].iloc[:10] == 7.0).all()
        assert (out.frame["x"].iloc[10:] == 8.0).all()

    def test_off_calendar_observation_still_fills(self):
        # a weekend print must carry into the following trading days
        calendar = pd.bdate_range("2020-03-02", periods=10)
        obs_dates = [calendar[0], pd.Timestamp("2020-03-07")]  # saturday
        series = panels.PricePanel(
            pd.DataFrame({"m2": [1.0, 2.0]}, index=obs_dates),
            asset_columns=(),
            feature_columns=("m2",),
        )
        out = panels.align_and_fill([series], calendar)
        assert out.frame["m2"].tolist() == [1.0] * 5 + [2.0] * 5

    def test_idempotent(self):
        calendar = pd.bdate_range("2020-03-02", periods=40)
        sparse = panels.PricePanel(
            pd.DataFrame({"q": [3.0, 4.5, 6.0]}, index=calendar[[3, 17, 31]]),
            asset_columns=(),
            feature_columns=("q",),
        )
        once = panels.align_and_fill([sparse], calendar)
        twice = panels.align_and_fill([once], calendar)
        pd.testing.assert_frame_equal(once.frame, twice.frame)

    def test_disjoint_range_rejected(self):
        calendar = pd.bdate_range("2020-03-02", periods=5)
        panel = make_panel([[1.0], [2.0]], start="2021-06-01")
        with pytest.raises(DataError, match="overlap"):
            panels.align_and_fill([panel], calendar)

    def test_duplicate_column_name_rejected(self):
        a = make_panel([[1.0], [2.0]], assets=["same"])
        b = make_panel([[3.0], [4.0]], assets=["same"])
        with pytest.raises(DataError, match="more than one panel"):
            panels.align_and_fill([a, b], a.dates)

    def test_column_classification_survives(self):
        px = make_panel([[1.0], [2.0]], assets=["stock"])
        ind = panels.PricePanel(
            pd.DataFrame({"cpi": [5.0, 5.1]}, index=px.dates),
            asset_columns=(),
            feature_columns=("cpi",),
        )
        out = panels.align_and_fill([px, ind], px.dates)
        assert out.asset_columns == ("stock",)
        assert out.feature_columns == ("cpi",)


class TestSimpleReturns:
    def test_hand_values(self):
        panel = make_panel([[100.0], [101.0]])
        rets = panels.simple_returns(panel)
        assert rets.values.flatten().tolist() == pytest.approx([0.01])

    def test_constant_prices(self):
        rets = panels.simple_returns(make_panel([[50.0], [50.0], [50.0]]))
        assert rets.values.flatten().tolist() == [0.0, 0.0]

    def test_halving(self):
        rets = panels.simple_returns(make_panel([[100.0], [50.0]]))
        assert rets.values.flatten().tolist() == [-0.5]

    def test_row_count_and_dates(self):
        panel = make_panel(np.linspace(10, 20, 7).reshape(-1, 1))
        rets = panels.simple_returns(panel)
        assert len(rets) == len(panel) - 1
        assert rets.dates.equals(panel.dates[1:])

    def test_too_short(self):
        with pytest.raises(DataError):
            panels.simple_returns(make_panel([[100.0]]))

    def test_compounding_reconstructs_price_ratio(self):
        rng = np.random.default_rng(11)
        prices = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, size=(300, 3)), axis=0))
        panel = make_panel(prices)
        rets = panels.simple_returns(panel)
        rebuilt = np.prod(1.0 + rets.values, axis=0)
        target = prices[-1] / prices[0]
        assert np.max(np.abs(rebuilt / target - 1.0)) < 1e-12


class TestYoy:
    def test_constant_series(self):
        s = pd.Series(np.full(30, 7.5))
        out = panels.yoy_percent_change(s, 12)
        assert len(out) == 18
        assert (out == 0.0).all()

    def test_doubling(self):
        s = pd.Series([3.0, 6.0])
        assert panels.yoy_percent_change(s, 1).tolist() == [100.0]

    def test_halving(self):
        s = pd.Series([8.0, 4.0])
        assert panels.yoy_percent_change(s, 1).tolist() == [-50.0]

    def test_too_short(self):
        with pytest.raises(DataError):
            panels.yoy_percent_change(pd.Series([1.0, 2.0]), 2)

    def test_non_positive_level(self):
        with pytest.raises(DataError):
            panels.yoy_percent_change(pd.Series([1.0, -2.0, 3.0]), 1)

    def test_scale_invariance(self):
        rng = np.random.default_rng(12)
        s = pd.Series(np.exp(rng.normal(size=40)))
        base = panels.yoy_percent_change(s, 12)
        for c in (0.001, 3.0, 1e6):
            scaled = panels.yoy_percent_change(c * s, 12)
            assert np.allclose(base.values, scaled.values, rtol=1e-10, atol=1e-10)


class TestRollingVolatility:
    def test_constant_prices(self):
        s = pd.Series(np.full(40, 250.0), index=pd.bdate_range("2020-01-02", periods=40))
        vol = panels.rolling_volatility(s, window=30)
        assert len(vol) == 10
        assert (vol == 0.0).all()

    def test_alternating_one_percent(self):
        factors = np.ones(41)
        factors[1::2] = 1.01
        factors[2::2] = 0.99
        prices = pd.Series(100.0 * np.cumprod(factors))
        vol = panels.rolling_volatility(prices, window=4)
        assert vol.iloc[-1] == pytest.approx(0.01 * math.sqrt(252), rel=1e-6)

    def test_window_longer_than_series(self):
        with pytest.raises(DataError):
            panels.rolling_volatility(pd.Series([1.0, 2.0, 3.0]), window=30)

    def test_output_dates(self):
        idx = pd.bdate_range("2020-01-02", periods=50)
        s = pd.Series(np.linspace(100, 110, 50), index=idx)
        vol = panels.rolling_volatility(s, window=30)
        assert vol.index.equals(idx[30:])


class TestModelFeatures:
    def test_eight_feature_layout(self):
        rng = np.random.default_rng(13)
        prices = np.exp(rng.normal(0, 0.01, size=(10, 4)).cumsum(axis=0)) * 100
        panel = make_panel(prices, assets=["stock", "bond", "gold", "volidx"])
        feats = panels.model_features(panel)
        assert feats.shape == (9, 8)
        assert list(feats.columns[:4]) == [
            "stock_price",
            "bond_price",
            "gold_price",
            "volidx_price",
        ]
        assert feats.index.equals(panel.dates[1:])
        np.testing.assert_allclose(feats.values[:, :4], prices[1:])
        rets = panels.simple_returns(panel)
        np.testing.assert_allclose(feats.values[:, 4:], rets.values)

    def test_indicators_appended(self):
        panel = make_panel(
            np.full((5, 2), 10.0), features={"cpi": np.arange(5.0)}
        )
        feats = panels.model_features(panel)
        assert feats.shape == (4, 5)
        assert feats["cpi"].tolist() == [1.0, 2.0, 3.0, 4.0]


class TestBuildWindows:
    def make_dataset(self, rows, lookback, n_assets=2, n_features=3):
        rng = np.random.default_rng(rows * 100 + lookback)
        prices = np.exp(rng.normal(0, 0.01, size=(rows + 1, n_assets)).cumsum(axis=0))
        panel = make_panel(prices)
        rets = panels.simple_returns(panel)
        feats = rng.normal(size=(rows, n_features))
        return feats, rets

    def test_sample_count(self):
        feats, rets = self.make_dataset(60, 50)
        ds = panels.build_windows(feats, rets, 50)
        assert len(ds) == 10
        assert ds.X.shape == (10, 50, 3)

    def test_boundary_single_sample(self):
        feats, rets = self.make_dataset(51, 50)
        ds = panels.build_windows(feats, rets, 50)
        assert len(ds) == 1
        np.testing.assert_array_equal(ds.y[0], rets.values[50])
        assert ds.target_dates[0] == np.asarray(rets.dates)[50]

    def test_exact_fit_rejected(self):
        feats, rets = self.make_dataset(50, 50)
        with pytest.raises(DataError):
            panels.build_windows(feats, rets, 50)

    def test_every_target_and_window_exhaustively(self):
        feats, rets = self.make_dataset(23, 5)
        ds = panels.build_windows(feats, rets, 5)
        assert len(ds) == 18
        for k in range(len(ds)):
            np.testing.assert_array_equal(ds.X[k], feats[k : k + 5])
            np.testing.assert_array_equal(ds.y[k], rets.values[k + 5])

    def test_frame_alignment_checked(self):
        feats, rets = self.make_dataset(30, 5)
        frame = pd.DataFrame(feats, index=pd.bdate_range("1999-01-04", periods=30))
        with pytest.raises(DataError, match="aligned"):
            panels.build_windows(frame, rets, 5)

    def test_windows_are_writable_copies(self):
        feats, rets = self.make_dataset(30, 5)
        ds = panels.build_windows(feats, rets, 5)
        ds.X[0, 0, 0] = 123.0
        assert feats[0, 0] != 123.0


class TestChronologicalSplit:
    def build(self, n):
        X = np.arange(n * 4 * 2, dtype=float).reshape(n, 4, 2)
        y = np.arange(n * 3, dtype=float).reshape(n, 3) * 1e-4
        dates = np.arange(n)
        return panels.WindowedDataset(X, y, dates, lookback=4)

    def test_hundred_samples(self):
        train, val = panels.chronological_split(self.build(100), 0.10)
        assert len(train) == 90
        assert len(val) == 10
        assert train.target_dates.max() < val.target_dates.min()

    def test_ceiling_rule(self):
        train, val = panels.chronological_split(self.build(10), 0.10)
        assert (len(train), len(val)) == (9, 1)
        train, val = panels.chronological_split(self.build(95), 0.10)
        assert (len(train), len(val)) == (85, 10)

    def test_endpoint_fractions_rejected(self):
        ds = self.build(10)
        for frac in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ConfigError):
                panels.chronological_split(ds, frac)

    def test_empty_dataset_rejected(self):
        empty = panels.WindowedDataset(
            np.empty((0, 4, 2)), np.empty((0, 3)), np.empty(0), lookback=4
        )
        with pytest.raises(DataError):
            panels.chronological_split(empty, 0.10)


class TestPanelValidation:
    def test_nan_rejected(self):
        frame = pd.DataFrame(
            {"a": [1.0, np.nan]}, index=pd.bdate_range("2020-01-02", periods=2)
        )
        with pytest.raises(DataError, match="missing"):
            panels.PricePanel(frame, asset_columns=("a",))

    def test_duplicate_dates_rejected(self):
        idx = pd.DatetimeIndex(["2020-01-02", "2020-01-02"])
        frame = pd.DataFrame({"a": [1.0, 2.0]}, index=idx)
        with pytest.raises(DataError, match="duplicate"):
            panels.PricePanel(frame, asset_columns=("a",))

    def test_restrict_window(self):
        panel = make_panel(np.linspace(1, 2, 10).reshape(-1, 1))
        sub = panel.restrict(panel.dates[3], panel.dates[7])
        assert len(sub) == 5
        assert sub.dates[0] == panel.dates[3]

    def test_restrict_empty_rejected(self):
        panel = make_panel([[1.0], [2.0]])
        with pytest.raises(DataError):
            panel.restrict("2035-01-01", "2035-12-31")

    def test_return_floor_enforced(self):
        frame = pd.DataFrame(
            {"a": [-1.5]}, index=pd.bdate_range("2020-01-02", periods=1)
        )
        with pytest.raises(DataError):
            panels.ReturnPanel(frame)

    def test_trading_calendar_union(self):
        a = make_panel([[1.0], [2.0]], start="2020-01-02")
        b = make_panel([[1.0], [2.0]], start="2020-01-03")
        cal = panels.trading_calendar([a, b])
        assert len(cal) == 3
        assert cal.is_monotonic_increasing
