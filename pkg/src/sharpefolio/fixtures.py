"""Deterministic synthetic market data for tests and offline demo runs.

Geometric random walks with per-asset drift and volatility, generated
from named RNG streams so every caller sees identical panels. The CSV
writers produce the same file layout the loader expects from exported
price histories (ISO dates, one adjusted-close column).
"""

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError
from .panels import PricePanel
from .rng import derive_rng

__all__ = [
    "ASSET_PROFILES",
    "ALTERNATE_PROFILES",
    "INDICATOR_PROFILES",
    "PROXY_PROFILES",
    "synthetic_panel",
    "write_csv",
    "write_indicators",
    "write_universe",
]

# drift and volatility per simulated trading day
ASSET_PROFILES = {
    "stock": (100.0, 0.00035, 0.011),
    "bond": (75.0, 0.00012, 0.0035),
    "commodity": (25.0, 0.00020, 0.0095),
    "volatility": (20.0, 0.0, 0.025),
}

PROXY_PROFILES = {
    "wilshire": (5000.0, 0.00030, 0.010),
    "bofa": (900.0, 0.00015, 0.0030),
    "gold": (400.0, 0.00018, 0.0085),
}

# the alternate universe shares the proxy series and adds a cash rate
ALTERNATE_PROFILES = {
    **PROXY_PROFILES,
    "cash": (50.0, 0.00008, 0.0004),
}

INDICATOR_PROFILES = {
    "yield_spread": (1.5, 0.0, 0.01),
    "fed_funds": (2.0, 0.0, 0.008),
    "business_confidence": (100.0, 0.0, 0.002),
    "unemployment_rate": (5.0, 0.0, 0.004),
    "capacity_utilization": (78.0, 0.0, 0.002),
    "housing_starts": (1400.0, 0.0, 0.01),
    "building_permits": (1300.0, 0.0, 0.01),
    "gdp": (18000.0, 0.0001, 0.002),
    "cpi": (230.0, 0.00008, 0.001),
    "ppi": (200.0, 0.00008, 0.002),
    "corporate_profits": (1800.0, 0.0001, 0.004),
    "industrial_production": (100.0, 0.00003, 0.002),
    "new_home_sales": (600.0, 0.0, 0.012),
    "imports_total": (230000.0, 0.0001, 0.004),
    "personal_consumption": (12000.0, 0.0001, 0.001),
    "unemployment_claims": (300000.0, 0.0, 0.015),
    "consumer_sentiment": (90.0, 0.0, 0.006),
    "euro_area_confidence": (100.0, 0.0, 0.003),
    "leading_indicators": (100.0, 0.0, 0.002),
    "recession_probability": (1.0, 0.0, 0.05),
}


def synthetic_panel(
    profiles=None,
    periods: int = 800,
    start: str = "2006-01-03",
    seed: int = 7,
) -> PricePanel:
    """One geometric walk per profile entry, on a business-day calendar."""
    if profiles is None:
        profiles = ASSET_PROFILES
    if periods < 2:
        raise ConfigError(f"need at least 2 periods, got {periods}")
    dates = pd.bdate_range(start, periods=periods)
    data = {}
    for name, (level, drift, vol) in profiles.items():
        rng = derive_rng(seed, "fixture", name)
        steps = rng.normal(drift, vol, size=periods - 1)
        log_path = np.concatenate([[0.0], np.cumsum(steps)])
        data[name] = level * np.exp(log_path)
    frame = pd.DataFrame(data, index=dates)
    return PricePanel(frame, asset_columns=tuple(profiles))


def write_csv(path, dates, values, value_header: str = "Adj Close") -> None:
    """date/value rows formatted to round-trip float64 exactly."""
    lines = [f"Date,{value_header}"]
    for date, value in zip(dates, values):
        lines.append(f"{pd.Timestamp(date).date()},{value:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_universe(directory, panel: PricePanel | None = None, **panel_kwargs) -> dict:
    """One CSV per asset column; returns {column: file path}."""
    if panel is None:
        panel = synthetic_panel(**panel_kwargs)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in panel.frame.columns:
        path = directory / f"{name}.csv"
        write_csv(path, panel.dates, panel.frame[name].values)
        paths[name] = path
    return paths


def write_indicators(
    directory, periods: int = 800, start: str = "2006-01-03", seed: int = 7,
    every: int = 21,
) -> dict:
    """Indicator CSVs sampled every `every` trading days (monthly-ish),
    exercising the forward-fill alignment the loader applies."""
    panel = synthetic_panel(INDICATOR_PROFILES, periods=periods, start=start, seed=seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in panel.frame.columns:
        path = directory / f"{name}.csv"
        write_csv(path, panel.dates[::every], panel.frame[name].values[::every])
        paths[name] = path
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Write the synthetic fixture universe as CSV files."
    )
    parser.add_argument("out", help="output directory")
    parser.add_argument("--periods", type=int, default=800)
    parser.add_argument("--start", default="2006-01-03")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument(
        "--proxies", action="store_true",
        help="also write the pretraining proxy series",
    )
    parser.add_argument(
        "--alternates", action="store_true",
        help="also write the alternate universe (proxies plus a cash rate)",
    )
    parser.add_argument(
        "--indicators", action="store_true",
        help="also write monthly-sampled indicator series",
    )
    args = parser.parse_args(argv)
    paths = write_universe(
        args.out, periods=args.periods, start=args.start, seed=args.seed
    )
    extra_profiles = {}
    if args.proxies:
        extra_profiles.update(PROXY_PROFILES)
    if args.alternates:
        extra_profiles.update(ALTERNATE_PROFILES)
    if extra_profiles:
        extra_panel = synthetic_panel(
            extra_profiles, periods=args.periods, start=args.start, seed=args.seed
        )
        paths.update(write_universe(args.out, panel=extra_panel))
    if args.indicators:
        paths.update(
            write_indicators(
                args.out, periods=args.periods, start=args.start, seed=args.seed
            )
        )
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
