"""Sharpe-ratio loss and the mini-batch training loop.

A model object plugs in through two hooks: ``build_params(rng,
n_features, n_assets) -> ParameterSet`` and ``forward(params, X, mode,
rng) -> Tensor``. Training maximizes the annualized batch Sharpe by
descending its negation with Adam.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericalError
from .metrics import ANNUALIZER
from .panels import PricePanel, WindowedDataset, chronological_split, rolling_volatility
from .rng import derive_rng

__all__ = [
    "EPSILON",
    "TrainConfig",
    "TrainLog",
    "sharpe_loss",
    "batch_sharpe",
    "train",
    "pretrain_finetune",
    "build_pretrain_panel",
]

EPSILON = 1e-8  # keeps the loss finite on zero-variance batches


def sharpe_loss(weights, next_day_returns) -> ad.Tensor:
    """-(mean / (std + eps)) * sqrt(252) of the batch portfolio returns."""
    w = weights if isinstance(weights, ad.Tensor) else ad.Tensor(weights)
    r = next_day_returns if isinstance(next_day_returns, ad.Tensor) else ad.Tensor(next_day_returns)
    if w.shape != r.shape:
        raise DataError(f"weights shape {w.shape} != returns shape {r.shape}")
    if w.ndim != 2 or w.shape[0] < 2:
        raise DataError(
            "the Sharpe loss needs a (batch, assets) matrix with batch >= 2 "
            "for a nondegenerate return std"
        )
    portfolio = ad.tsum(ad.mul(w, r), axis=1)
    m = ad.mean(portfolio)
    s = ad.std_population(portfolio)
    ratio = ad.mul(m, ad.power(s + ad.constant(EPSILON), -1.0))
    return ad.scale(ratio, -ANNUALIZER)


def batch_sharpe(weights: np.ndarray, next_day_returns: np.ndarray) -> float:
    """The value the loss negates, computed outside the tape."""
    portfolio = (weights * next_day_returns).sum(axis=1)
    return float(portfolio.mean() / (portfolio.std() + EPSILON) * ANNUALIZER)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    learning_rate: float = 0.001
    l2: float = 0.0
    validation_fraction: float = 0.10
    seed: int = 0
    keep_best: bool = False
    normalize: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(
                "batch_size must be at least 2: the Sharpe loss needs a "
                "nondegenerate return std within each batch"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be nonnegative")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")


@dataclass
class TrainLog:
    """Per-epoch curves plus the pre-update baseline evaluations."""

    train_sharpe: list
    val_sharpe: list
    initial_train_sharpe: float
    initial_val_sharpe: float
    best_epoch: int
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.train_sharpe) != len(self.val_sharpe):
            raise DataError("train and validation curves must have equal length")

    @property
    def epochs(self) -> int:
        return len(self.train_sharpe)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, self.epochs + 1),
                "train_sharpe": self.train_sharpe,
                "val_sharpe": self.val_sharpe,
            }
        )

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def _evaluate(model, params, X, y, chunk: int = 512) -> float:
    outs = []
    for start in range(0, len(X), chunk):
        w = model.forward(params, X[start : start + chunk], "eval", None)
        outs.append(w.data)
    return batch_sharpe(np.concatenate(outs), y)


def train(
    model,
    dataset: WindowedDataset,
    config: TrainConfig,
    initial_params: ad.ParameterSet | None = None,
    allow_zero_batches: bool = False,
):
    """Seeded shuffled mini-batches, Adam steps, per-epoch eval logging.

    Returns final-epoch parameters unless config.keep_best picks the
    best-validation epoch instead. Partial trailing batches are dropped.
    """
    train_ds, val_ds = chronological_split(dataset, config.validation_fraction)
    n_train = len(train_ds)
    n_batches = n_train // config.batch_size
    if n_batches == 0 and not allow_zero_batches:
        raise DataError(
            f"{n_train} training samples cannot fill a single batch of {config.batch_size}"
        )
    X_train, y_train = train_ds.X, train_ds.y
    X_val, y_val = val_ds.X, val_ds.y
    norm_mean = norm_std = None
    if config.normalize:
        # statistics from the training split only, never the validation tail
        norm_mean = X_train.mean(axis=(0, 1))
        norm_std = X_train.std(axis=(0, 1))
        norm_std = np.where(norm_std < 1e-12, 1.0, norm_std)
        X_train = (X_train - norm_mean) / norm_std
        X_val = (X_val - norm_mean) / norm_std

    if initial_params is not None:
        params = initial_params
    else:
        params = model.build_params(
            derive_rng(config.seed, "init"), dataset.n_features, dataset.n_assets
        )
    rng_shuffle = derive_rng(config.seed, "shuffle")
    rng_dropout = derive_rng(config.seed, "dropout")
    optimizer = ad.Adam(learning_rate=config.learning_rate, weight_decay=config.l2)

    initial_train = _evaluate(model, params, X_train, y_train)
    initial_val = _evaluate(model, params, X_val, y_val)
    train_curve: list = []
    val_curve: list = []
    best_params = None
    best_val = -np.inf
    for epoch in range(1, config.epochs + 1):
        order = rng_shuffle.permutation(n_train)
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            try:
                weights = model.forward(params, X_train[idx], "train", rng_dropout)
                loss = sharpe_loss(weights, ad.constant(y_train[idx]))
                params.zero_grad()
                loss.backward()
                optimizer.step(params)
            except NumericalError as exc:
                raise NumericalError(
                    f"training diverged at epoch {epoch}, batch {b + 1}: {exc}"
                ) from exc
        train_curve.append(_evaluate(model, params, X_train, y_train))
        val_curve.append(_evaluate(model, params, X_val, y_val))
        if config.keep_best and val_curve[-1] > best_val:
            best_val = val_curve[-1]
            best_params = params.copy()

    best_epoch = int(np.argmax(val_curve)) + 1 if val_curve else 0
    if config.keep_best and best_params is not None:
        params = best_params
    log = TrainLog(
        train_sharpe=train_curve,
        val_sharpe=val_curve,
        initial_train_sharpe=initial_train,
        initial_val_sharpe=initial_val,
        best_epoch=best_epoch,
        norm_mean=norm_mean,
        norm_std=norm_std,
    )
    return params, log


def pretrain_finetune(model, pretrain_dataset, finetune_dataset, configs):
    """Phase 1 from scratch on proxy data, phase 2 from its parameters.

    Phase 2 gets a fresh optimizer. A fine-tune split too small for one
    batch leaves the phase-1 parameters unchanged (the epochs still log
    evaluations).
    """
    pretrain_config, finetune_config = configs
    if pretrain_dataset.n_features != finetune_dataset.n_features:
        raise DataError(
            f"feature dimension changed between phases: "
            f"{pretrain_dataset.n_features} vs {finetune_dataset.n_features}"
        )
    if pretrain_dataset.n_assets != finetune_dataset.n_assets:
        raise DataError(
            f"asset dimension changed between phases: "
            f"{pretrain_dataset.n_assets} vs {finetune_dataset.n_assets}"
        )
    phase1_params, phase1_log = train(model, pretrain_dataset, pretrain_config)
    phase2_params, phase2_log = train(
        model,
        finetune_dataset,
        finetune_config,
        initial_params=phase1_params.copy(),
        allow_zero_batches=True,
    )
    return phase2_params, (phase1_log, phase2_log)


def build_pretrain_panel(
    proxies: PricePanel,
    vol_window: int = 30,
    target_columns=("stock", "bond", "commodity", "volatility"),
) -> PricePanel:
    """Map three proxy series onto the four-asset universe layout.

    Column order: stock proxy, bond proxy, commodity proxy, then the
    stock proxy's annualized rolling volatility times 100 standing in
    for the volatility index.
    """
    if proxies.n_assets != 3:
        raise DataError(
            f"need exactly stock, bond, and commodity proxy columns, "
            f"got {list(proxies.asset_columns)}"
        )
    target_columns = tuple(target_columns)
    if len(target_columns) != 4:
        raise ConfigError("target universe must name four columns")
    stock, bond, commodity = proxies.asset_columns
    vol = rolling_volatility(proxies.frame[stock], vol_window) * 100.0
    dates = vol.index
    frame = pd.DataFrame(
        {
            target_columns[0]: proxies.frame[stock].loc[dates],
            target_columns[1]: proxies.frame[bond].loc[dates],
            target_columns[2]: proxies.frame[commodity].loc[dates],
            target_columns[3]: vol,
        },
        index=dates,
    )
    return PricePanel(frame, asset_columns=target_columns)
