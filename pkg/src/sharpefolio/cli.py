"""Command-line entry point: validate configs, run backtests, compare reports.

Configs are TOML files; relative data paths resolve against the current
working directory so shipped preset files work unmodified next to a
prepared data directory. Every run writes a manifest sufficient to
reproduce it: config hash, seed, package version, and data digests.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__
from .backtest import (
    DEFAULT_COST_RATE,
    DEFAULT_ZOOM_START,
    BacktestReport,
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
from .errors import ConfigError, DataError, NumericalError
from .metrics import METRIC_LABELS, TRADING_DAYS, MetricTable, RollingSharpeSeries
from .models import LstmAllocator, TransformerAllocator
from .panels import PricePanel, align_and_fill, load_csv, trading_calendar
from .training import TrainConfig, build_pretrain_panel

log = logging.getLogger("sharpefolio")

NEURAL_MODELS = ("lstm", "transformer")
BENCHMARK_MODELS = ("mvo", "balanced", "fixed")


@dataclass
class SourceSpec:
    name: str
    path: Path
    schema: dict
    kind: str


@dataclass
class RunConfig:
    """Resolved settings for one experiment run."""

    path: Path
    sources: list
    universe: list
    model_type: str
    model_params: dict
    train_params: dict
    schedule_params: dict
    cost_rate: float
    rolling_window: int
    features: str
    seed: int | None
    out: Path
    preset: str | None = None
    pretrain_sources: list = field(default_factory=list)
    pretrain_vol_window: int = 30
    replicates: dict | None = None

    def resolved(self) -> dict:
        """The effective settings, JSON-ready, used for echoing and hashing."""
        return {
            "config": str(self.path),
            "preset": self.preset,
            "sources": {
                s.name: {"path": str(s.path), "schema": s.schema, "kind": s.kind}
                for s in self.sources
            },
            "universe": self.universe,
            "model": {"type": self.model_type, **self.model_params},
            "train": self.train_params,
            "schedule": self.schedule_params,
            "cost_rate": self.cost_rate,
            "rolling_window": self.rolling_window,
            "features": self.features,
            "seed": self.seed,
            "out": str(self.out),
            "pretrain": {
                s.name: {"path": str(s.path), "schema": s.schema, "kind": s.kind}
                for s in self.pretrain_sources
            }
            or None,
            "pretrain_vol_window": self.pretrain_vol_window if self.pretrain_sources else None,
            "replicates": self.replicates,
        }


def _parse_sources(table: dict, section: str) -> list:
    sources = []
    for name, spec in table.items():
        if not isinstance(spec, dict) or "path" not in spec:
            raise ConfigError(f"[{section}.{name}] needs a 'path' key")
        schema = {"date": spec.get("date", "Date"), name: spec.get("value", "Adj Close")}
        kind = spec.get("kind", "asset")
        sources.append(SourceSpec(name, Path(spec["path"]), schema, kind))
    return sources


def _resolve_config_path(value) -> Path:
    """A config path, or a bare preset name resolved to the shipped file."""
    path = Path(value)
    if path.is_file():
        return path
    if path.suffix == "" and "/" not in str(value):
        packaged = resources.files("sharpefolio") / "presets" / f"{value}.toml"
        if packaged.is_file():
            return Path(str(packaged))
    raise ConfigError(f"no such config file: {value}")


def load_config(path) -> RunConfig:
    path = _resolve_config_path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse failure: {exc}") from None

    for section in ("data", "universe", "model"):
        if section not in raw:
            raise ConfigError(f"{path}: missing [{section}] section")
    data = raw["data"]
    if "sources" not in data or not data["sources"]:
        raise ConfigError(f"{path}: [data.sources] lists no series")
    sources = _parse_sources(data["sources"], "data.sources")

    universe = raw["universe"].get("assets")
    if not universe:
        raise ConfigError(f"{path}: [universe] must list 'assets'")

    model = dict(raw["model"])
    model_type = model.pop("type", None)
    if model_type is None:
        raise ConfigError(f"{path}: [model] must name a 'type'")

    backtest_section = raw.get("backtest", {})
    pretrain_section = raw.get("pretrain", {})
    pretrain_sources = (
        _parse_sources(pretrain_section.get("sources", {}), "pretrain.sources")
        if pretrain_section
        else []
    )

    return RunConfig(
        path=path,
        sources=sources,
        universe=list(universe),
        model_type=model_type,
        model_params=model,
        train_params=dict(raw.get("train", {})),
        schedule_params=dict(raw.get("schedule", {})),
        cost_rate=float(backtest_section.get("cost_rate", DEFAULT_COST_RATE)),
        rolling_window=int(backtest_section.get("rolling_window", TRADING_DAYS)),
        features=backtest_section.get("features", "returns"),
        seed=raw.get("seed"),
        out=Path(raw.get("out", "runs/latest")),
        preset=raw.get("preset"),
        pretrain_sources=pretrain_sources,
        pretrain_vol_window=int(pretrain_section.get("vol_window", 30)),
        replicates=raw.get("replicates"),
    )


def validate_config(config: RunConfig) -> list:
    """All invariant violations, one message each; empty means valid."""
    problems = []
    for source in [*config.sources, *config.pretrain_sources]:
        if not source.path.exists():
            problems.append(f"missing data file: {source.path} (series {source.name!r})")
        if source.kind not in ("asset", "indicator"):
            problems.append(f"series {source.name!r}: unknown kind {source.kind!r}")
    asset_names = {s.name for s in config.sources if s.kind == "asset"}
    for name in config.universe:
        if name not in asset_names:
            problems.append(f"universe asset {name!r} has no [data.sources] entry")

    if config.model_type not in NEURAL_MODELS + BENCHMARK_MODELS:
        problems.append(
            f"unknown model type {config.model_type!r}; "
            f"expected one of {NEURAL_MODELS + BENCHMARK_MODELS}"
        )
    if config.model_type in NEURAL_MODELS:
        if config.seed is None:
            problems.append("neural models need an explicit seed (config key or --seed)")
        try:
            TrainConfig(seed=config.seed or 0, **config.train_params)
        except (ConfigError, TypeError) as exc:
            problems.append(f"[train] invalid: {exc}")
        try:
            _build_allocator(config, seed=config.seed or 0)
        except (ConfigError, TypeError) as exc:
            problems.append(f"[model] invalid: {exc}")
    if config.model_type == "fixed" and "weights" not in config.model_params:
        problems.append("fixed-weight model needs a 'weights' list")

    if config.features not in ("returns", "model"):
        problems.append(f"unknown feature layout {config.features!r}")
    if config.cost_rate < 0:
        problems.append(f"cost_rate must be nonnegative, got {config.cost_rate}")
    if config.rolling_window < 2:
        problems.append(f"rolling_window must be at least 2, got {config.rolling_window}")

    schedule = config.schedule_params
    for key in ("first_test", "end"):
        if key not in schedule:
            problems.append(f"[schedule] must set {key!r}")
    if config.replicates is not None:
        if int(config.replicates.get("n_runs", 0)) < 2:
            problems.append("[replicates] n_runs must be at least 2")
    if config.pretrain_sources and len(config.pretrain_sources) != 3:
        problems.append(
            f"[pretrain.sources] must list exactly 3 proxy series, "
            f"got {len(config.pretrain_sources)}"
        )
    return problems


def _build_allocator(config: RunConfig, seed: int):
    params = dict(config.model_params)
    if config.model_type == "lstm":
        return LstmAllocator(seed=seed, **params, **config.train_params)
    if config.model_type == "transformer":
        return TransformerAllocator(seed=seed, **params, **config.train_params)
    if config.model_type == "mvo":
        return MeanVarianceAllocator(**params)
    if config.model_type == "balanced":
        return BalancedAllocator(**params)
    if config.model_type == "fixed":
        return FixedWeightAllocator(**params)
    raise ConfigError(f"unknown model type {config.model_type!r}")


def _load_panel(sources, ordered_assets=None) -> PricePanel:
    """Load sources in universe order and align them on the trading calendar.

    Only asset series define the calendar; indicator series (possibly
    weekly or monthly) are forward-filled onto it.
    """
    panels = []
    kinds = []
    by_name = {s.name: s for s in sources}
    names = ordered_assets if ordered_assets is not None else [s.name for s in sources]
    extras = [s.name for s in sources if s.name not in set(names)]
    for name in [*names, *extras]:
        spec = by_name.get(name)
        if spec is None:
            raise ConfigError(f"universe asset {name!r} has no data source")
        log.info("loading %s from %s", name, spec.path)
        panels.append(load_csv(spec.path, spec.schema, kind=spec.kind))
        kinds.append(spec.kind)
    calendar = trading_calendar(
        [p for p, kind in zip(panels, kinds) if kind == "asset"]
    )
    return align_and_fill(panels, calendar)


def build_panel(config: RunConfig) -> PricePanel:
    panel = _load_panel(config.sources, config.universe)
    schedule = config.schedule_params
    start = schedule.get("data_start")
    end = schedule.get("end")
    return panel.restrict(
        pd.Timestamp(start) if start else None, pd.Timestamp(end) if end else None
    )


def build_pretrain(config: RunConfig) -> PricePanel | None:
    if not config.pretrain_sources:
        return None
    proxies = _load_panel(config.pretrain_sources)
    return build_pretrain_panel(
        proxies,
        vol_window=config.pretrain_vol_window,
        target_columns=tuple(config.universe),
    )


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(config: RunConfig, out: Path, seed, phases) -> None:
    resolved = config.resolved()
    resolved["seed"] = seed
    manifest = {
        "version": __version__,
        "seed": seed,
        "config_sha256": hashlib.sha256(
            json.dumps(resolved, sort_keys=True, default=str).encode()
        ).hexdigest(),
        "resolved_config": resolved,
        "phases": phases,
        "data_sha256": {
            s.name: _file_digest(s.path)
            for s in [*config.sources, *config.pretrain_sources]
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8"
    )


def cmd_validate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    problems = validate_config(config)
    if problems:
        for problem in problems:
            print(f"invalid: {problem}", file=sys.stderr)
        return 1
    print(json.dumps(config.resolved(), indent=2, default=str))
    return 0


def cmd_backtest(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out = Path(args.out)
    problems = validate_config(config)
    if problems:
        for problem in problems:
            print(f"invalid: {problem}", file=sys.stderr)
        return 1

    seed = config.seed if config.seed is not None else 0
    panel = build_panel(config)
    pretrain = build_pretrain(config)
    schedule_params = config.schedule_params
    schedule = make_schedule(
        schedule_params.get("data_start", panel.dates[0]),
        schedule_params["first_test"],
        schedule_params["end"],
        int(schedule_params.get("retrain_every", 2)),
    )
    allocator = _build_allocator(config, seed)
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    phases = ["pretrain", "finetune"] if pretrain is not None else ["train"]

    if config.replicates is not None:
        n_runs = int(config.replicates["n_runs"])
        reference = config.replicates.get("reference")
        log.info("running %d replicas with %d jobs", n_runs, args.jobs)
        result = replicate_runs(
            allocator,
            panel,
            schedule,
            n_runs=n_runs,
            base_seed=seed,
            cost_rate=config.cost_rate,
            features=config.features,
            reference=reference,
            jobs=args.jobs,
            rolling_window=config.rolling_window,
            pretrain=pretrain,
        )
        for k, report in enumerate(result.reports):
            report.write(out / f"run_{k:02d}")
        summary = {
            "n_runs": n_runs,
            "sharpes": [float(s) for s in result.sharpes],
            "mean_sharpe": float(result.sharpes.mean()),
            "std_sharpe": float(result.sharpes.std(ddof=1)),
            "z_test": result.test.to_dict() if result.test is not None else None,
        }
        (out / "replicates.json").write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
    else:
        log.info("running %s backtest into %s", config.model_type, out)
        report = run_strategy(
            allocator,
            panel,
            schedule,
            config.cost_rate,
            features=config.features,
            seed=seed,
            rolling_window=config.rolling_window,
            pretrain=pretrain,
        )
        report.write(out)
    write_manifest(config, out, seed, phases)
    print(f"wrote {out}")
    return 0


def _metric_table_from_csv(path: Path) -> MetricTable:
    frame = pd.read_csv(path, float_precision="round_trip")
    by_label = dict(zip(frame["metric"], frame["value"]))
    field_for = {label: name for name, label in METRIC_LABELS.items()}
    return MetricTable(**{field_for[label]: float(v) for label, v in by_label.items()})


def load_report(directory) -> BacktestReport:
    """Rebuild a comparable report from a run directory's output files."""
    directory = Path(directory)
    for name in ("returns.csv", "weights.csv", "metrics.csv"):
        if not (directory / name).exists():
            raise DataError(f"{directory} is not a report directory: missing {name}")
    returns = pd.read_csv(
        directory / "returns.csv", parse_dates=["date"], float_precision="round_trip"
    ).set_index("date")
    weights = pd.read_csv(
        directory / "weights.csv", parse_dates=["date"], float_precision="round_trip"
    ).set_index("date")
    allocations = AllocationSeries(weights.index, weights.values, tuple(weights.columns))
    turnover = np.concatenate(
        [[0.0], np.abs(np.diff(weights.values, axis=0)).sum(axis=1)]
    )
    rolling = None
    rolling_path = directory / "rolling_sharpe.csv"
    if rolling_path.exists():
        series = pd.read_csv(
            rolling_path, parse_dates=["date"], float_precision="round_trip"
        )
        window = len(returns) - len(series) + 1
        rolling = RollingSharpeSeries(
            np.asarray(series["date"].values), series["rolling_sharpe"].values, window
        )
    return BacktestReport(
        gross_returns=returns["gross"],
        net_returns=returns["net"],
        costs=returns["cost"],
        turnover=pd.Series(turnover, index=returns.index),
        allocations=allocations,
        metrics=_metric_table_from_csv(directory / "metrics.csv"),
        rolling_sharpe=rolling,
    )


def _effective_zoom(requested, reports):
    """The zoom start to use: the flag value, or the default when it applies.

    The default targets the 2020-05-01 analysis boundary; report calendars
    that end before it simply skip the zoom block instead of failing.
    """
    if requested is not None:
        if requested.lower() == "none":
            return None
        return pd.Timestamp(requested)
    last = max(report.dates[-1] for report in reports.values())
    if DEFAULT_ZOOM_START <= last:
        return DEFAULT_ZOOM_START
    log.info(
        "default zoom %s is past the report calendar end %s; skipping zoom block",
        DEFAULT_ZOOM_START.date(),
        last.date(),
    )
    return None


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise ConfigError("compare needs at least 2 report directories")
    reports = {}
    for directory in args.reports:
        name = Path(directory).name
        if name in reports:
            raise ConfigError(f"duplicate report name {name!r}")
        reports[name] = load_report(directory)
    baseline = args.baseline or next(iter(reports))
    result = compare(reports, baseline, zoom_start=_effective_zoom(args.zoom, reports))
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "comparison.json"
    result.write(path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sharpefolio",
        description="Sharpe-trained neural allocators with walk-forward backtests",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    validate = sub.add_parser("validate", help="check a config file")
    validate.add_argument("--config", required=True)
    validate.add_argument("--seed", type=int, default=None)
    validate.set_defaults(handler=cmd_validate)

    backtest = sub.add_parser("backtest", help="run a configured strategy")
    backtest.add_argument("--config", required=True)
    backtest.add_argument("--out", default=None, help="report directory")
    backtest.add_argument("--seed", type=int, default=None, help="overrides config seed")
    backtest.add_argument("--jobs", type=int, default=1, help="parallel replicate jobs")
    backtest.set_defaults(handler=cmd_backtest)

    comparison = sub.add_parser("compare", help="compare report directories")
    comparison.add_argument("reports", nargs="+", help="report directories")
    comparison.add_argument("--baseline", default=None, help="baseline report name")
    comparison.add_argument(
        "--zoom",
        default=None,
        help="zoom window start date (default 2020-05-01 when in range; 'none' disables)",
    )
    comparison.add_argument("--out", default=None, help="output directory")
    comparison.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SHARPEFOLIO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
