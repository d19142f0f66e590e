"""Portfolio allocators trained on the Sharpe ratio, with walk-forward backtests."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("sharpefolio")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .backtest import (
    BacktestReport,
    ComparisonReport,
    WalkForwardSchedule,
    compare,
    make_schedule,
    replicate_runs,
    run_strategy,
)
from .benchmarks import (
    AllocationSeries,
    BalancedAllocator,
    FixedWeightAllocator,
    MeanVarianceAllocator,
)
from .errors import ConfigError, DataError, NumericalError, SharpefolioError
from .metrics import MetricTable, metric_table, rolling_sharpe, sharpe
from .models import LstmAllocator, TransformerAllocator
from .panels import PricePanel, ReturnPanel, align_and_fill, load_csv, trading_calendar
from .rng import derive_rng
from .stats import mann_whitney_u, z_test_one_sample, z_test_two_sample
from .training import TrainConfig, pretrain_finetune, train

__all__ = [
    "AllocationSeries",
    "BacktestReport",
    "BalancedAllocator",
    "ComparisonReport",
    "ConfigError",
    "DataError",
    "FixedWeightAllocator",
    "LstmAllocator",
    "MeanVarianceAllocator",
    "MetricTable",
    "NumericalError",
    "PricePanel",
    "ReturnPanel",
    "SharpefolioError",
    "TrainConfig",
    "TransformerAllocator",
    "WalkForwardSchedule",
    "align_and_fill",
    "compare",
    "derive_rng",
    "load_csv",
    "make_schedule",
    "mann_whitney_u",
    "metric_table",
    "pretrain_finetune",
    "replicate_runs",
    "rolling_sharpe",
    "run_strategy",
    "sharpe",
    "train",
    "trading_calendar",
    "z_test_one_sample",
    "z_test_two_sample",
    "__version__",
]
