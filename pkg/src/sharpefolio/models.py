"""Neural allocators: an LSTM and a seq-to-seq transformer.

Both map a (batch, lookback, features) window onto simplex weight rows
through a dense head and a row-wise softmax. Forward passes are built
from the tape ops in :mod:`sharpefolio.autodiff` so the Sharpe loss can
differentiate straight through them.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .errors import ConfigError, DataError
from .panels import WindowedDataset
from .training import TrainConfig, train

__all__ = [
    "LstmAllocatorConfig",
    "TransformerAllocatorConfig",
    "init_parameters",
    "lstm_forward",
    "transformer_forward",
    "LstmAllocator",
    "TransformerAllocator",
]


@dataclass(frozen=True)
class LstmAllocatorConfig:
    input_features: int
    n_assets: int
    hidden_units: int = 64
    lookback: int = 50

    def __post_init__(self):
        for name in ("input_features", "n_assets", "hidden_units", "lookback"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class TransformerAllocatorConfig:
    input_features: int
    n_assets: int
    embedding_size: int = 32
    n_heads: int = 2
    n_layers: int = 1
    dropout: float = 0.05
    lookback: int = 504
    l2: float = 1e-5

    def __post_init__(self):
        for name in ("input_features", "n_assets", "embedding_size", "n_heads", "n_layers", "lookback"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.embedding_size % self.n_heads != 0:
            raise ConfigError(
                f"embedding size {self.embedding_size} not divisible by {self.n_heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))  # sign fix makes the factorization unique


def init_parameters(config, rng) -> ad.ParameterSet:
    """Glorot-uniform dense weights, orthogonal recurrent blocks, zero
    biases except the LSTM forget gate at 1."""
    if isinstance(config, LstmAllocatorConfig):
        return _init_lstm(config, rng)
    if isinstance(config, TransformerAllocatorConfig):
        return _init_transformer(config, rng)
    raise ConfigError(f"unknown model config type {type(config).__name__}")


def _init_lstm(config: LstmAllocatorConfig, rng) -> ad.ParameterSet:
    f, h, a = config.input_features, config.hidden_units, config.n_assets
    params = ad.ParameterSet()
    params["lstm/W"] = ad.parameter(_glorot(rng, (f, 4 * h), f, 4 * h))
    # gate packing [input, forget, cell, output], one orthogonal block each
    params["lstm/U"] = ad.parameter(
        np.concatenate([_orthogonal(rng, h) for _ in range(4)], axis=1)
    )
    bias = np.zeros(4 * h)
    bias[h : 2 * h] = 1.0
    params["lstm/b"] = ad.parameter(bias)
    params["head/W"] = ad.parameter(_glorot(rng, (h, a), h, a))
    params["head/b"] = ad.parameter(np.zeros(a))
    return params


def _init_transformer(config: TransformerAllocatorConfig, rng) -> ad.ParameterSet:
    f, e, a = config.input_features, config.embedding_size, config.n_assets
    params = ad.ParameterSet()
    params["embed/W"] = ad.parameter(_glorot(rng, (f, e), f, e))
    params["embed/b"] = ad.parameter(np.zeros(e))
    for i in range(config.n_layers):
        for name in ("q", "k", "v", "out"):
            params[f"enc{i}/{name}_W"] = ad.parameter(_glorot(rng, (e, e), e, e))
            params[f"enc{i}/{name}_b"] = ad.parameter(np.zeros(e))
        params[f"enc{i}/ln1_gamma"] = ad.parameter(np.ones(e))
        params[f"enc{i}/ln1_beta"] = ad.parameter(np.zeros(e))
        params[f"enc{i}/ffn_W1"] = ad.parameter(_glorot(rng, (e, 4 * e), e, 4 * e))
        params[f"enc{i}/ffn_b1"] = ad.parameter(np.zeros(4 * e))
        params[f"enc{i}/ffn_W2"] = ad.parameter(_glorot(rng, (4 * e, e), 4 * e, e))
        params[f"enc{i}/ffn_b2"] = ad.parameter(np.zeros(e))
        params[f"enc{i}/ln2_gamma"] = ad.parameter(np.ones(e))
        params[f"enc{i}/ln2_beta"] = ad.parameter(np.zeros(e))
    params["dec/query"] = ad.parameter(_glorot(rng, (1, e), 1, e))
    for name in ("q", "k", "v", "out"):
        params[f"dec/{name}_W"] = ad.parameter(_glorot(rng, (e, e), e, e))
        params[f"dec/{name}_b"] = ad.parameter(np.zeros(e))
    params["head/W"] = ad.parameter(_glorot(rng, (e, a), e, a))
    params["head/b"] = ad.parameter(np.zeros(a))
    return params


def _as_batch(batch) -> ad.Tensor:
    t = batch if isinstance(batch, ad.Tensor) else ad.Tensor(np.asarray(batch, dtype=np.float64))
    if t.ndim != 3:
        raise DataError(f"model input must be (batch, lookback, features), got {t.shape}")
    return t


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise DataError(f"mode must be 'train' or 'eval', got {mode!r}")


def lstm_forward(params: ad.ParameterSet, batch, mode: str = "eval") -> ad.Tensor:
    """Unroll a single LSTM layer and softmax the final state's logits."""
    _check_mode(mode)
    x = _as_batch(batch)
    W, U, b = params["lstm/W"], params["lstm/U"], params["lstm/b"]
    n_features, quad = W.shape
    hidden = quad // 4
    if x.shape[2] != n_features:
        raise DataError(f"expected {n_features} input features, got {x.shape[2]}")
    n_batch, lookback = x.shape[0], x.shape[1]
    h = ad.constant(np.zeros((n_batch, hidden)))
    c = ad.constant(np.zeros((n_batch, hidden)))
    for t in range(lookback):
        z = x[:, t, :] @ W + h @ U + b
        gate_in = ad.sigmoid(z[:, :hidden])
        gate_forget = ad.sigmoid(z[:, hidden : 2 * hidden])
        cell = ad.tanh(z[:, 2 * hidden : 3 * hidden])
        gate_out = ad.sigmoid(z[:, 3 * hidden :])
        c = ad.mul(gate_forget, c) + ad.mul(gate_in, cell)
        h = ad.mul(gate_out, ad.tanh(c))
    logits = h @ params["head/W"] + params["head/b"]
    return ad.softmax(logits, axis=-1)


def lstm_hidden_states(params: ad.ParameterSet, batch) -> list:
    """Per-step hidden states (eval only), for unrolling diagnostics."""
    x = _as_batch(batch)
    W, U, b = params["lstm/W"], params["lstm/U"], params["lstm/b"]
    hidden = W.shape[1] // 4
    h = ad.constant(np.zeros((x.shape[0], hidden)))
    c = ad.constant(np.zeros((x.shape[0], hidden)))
    states = []
    for t in range(x.shape[1]):
        z = x[:, t, :] @ W + h @ U + b
        gate_in = ad.sigmoid(z[:, :hidden])
        gate_forget = ad.sigmoid(z[:, hidden : 2 * hidden])
        cell = ad.tanh(z[:, 2 * hidden : 3 * hidden])
        gate_out = ad.sigmoid(z[:, 3 * hidden :])
        c = ad.mul(gate_forget, c) + ad.mul(gate_in, cell)
        h = ad.mul(gate_out, ad.tanh(c))
        states.append(h.data.copy())
    return states


_PE_CACHE: dict = {}
_MASK_CACHE: dict = {}


def _positional_encoding(length: int, size: int) -> np.ndarray:
    key = (length, size)
    if key not in _PE_CACHE:
        pos = np.arange(length)[:, None]
        dim = np.arange(size)[None, :]
        angles = pos / np.power(10000.0, 2.0 * (dim // 2) / size)
        pe = np.where(dim % 2 == 0, np.sin(angles), np.cos(angles))
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


def _causal_mask(length: int) -> np.ndarray:
    # -1e9 instead of -inf: the tensor constructor rejects non-finite data
    if length not in _MASK_CACHE:
        _MASK_CACHE[length] = np.triu(np.full((length, length), -1e9), k=1)
    return _MASK_CACHE[length]


def _layer_norm(x, gamma, beta, eps: float = 1e-5):
    m = ad.mean(x, axis=-1, keepdims=True)
    centered = x - m
    var = ad.mean(ad.mul(centered, centered), axis=-1, keepdims=True)
    inv = ad.power(var + ad.constant(eps), -0.5)
    return ad.mul(ad.mul(centered, inv), gamma) + beta


def _split_heads(x, n_heads: int):
    n_batch, length, size = x.shape
    return ad.transpose(
        ad.reshape(x, (n_batch, length, n_heads, size // n_heads)), (0, 2, 1, 3)
    )


def _attention(q, k, v, mask=None):
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + ad.constant(mask)
    probs = ad.softmax(scores, axis=-1)
    return ad.matmul(probs, v), probs


def transformer_forward(
    params: ad.ParameterSet,
    batch,
    mode: str = "eval",
    rng=None,
    n_heads: int = 2,
    dropout_rate: float = 0.0,
    return_attention: bool = False,
):
    """Causal encoder stack plus a single-query cross-attention decoder.

    Post-norm encoder layers; sinusoidal positions added to the input
    projection; dropout after each attention and feed-forward sublayer
    in train mode (rng required then). The head count is not recoverable
    from the square projection weights, so the caller supplies it.
    """
    _check_mode(mode)
    if mode == "train" and dropout_rate > 0.0 and rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    x = _as_batch(batch)
    e = params["embed/W"].shape[1]
    if x.shape[2] != params["embed/W"].shape[0]:
        raise DataError(
            f"expected {params['embed/W'].shape[0]} input features, got {x.shape[2]}"
        )
    if e % n_heads != 0:
        raise ConfigError(f"embedding size {e} not divisible by {n_heads} heads")
    n_batch, length = x.shape[0], x.shape[1]
    attention_probs = []

    def _dropout(t):
        return ad.dropout(t, dropout_rate, mode, rng) if dropout_rate > 0.0 else t

    state = x @ params["embed/W"] + params["embed/b"]
    state = state + ad.constant(_positional_encoding(length, e))
    mask = _causal_mask(length)
    layer = 0
    while f"enc{layer}/q_W" in params:
        prefix = f"enc{layer}"
        q = _split_heads(state @ params[f"{prefix}/q_W"] + params[f"{prefix}/q_b"], n_heads)
        k = _split_heads(state @ params[f"{prefix}/k_W"] + params[f"{prefix}/k_b"], n_heads)
        v = _split_heads(state @ params[f"{prefix}/v_W"] + params[f"{prefix}/v_b"], n_heads)
        context, probs = _attention(q, k, v, mask)
        attention_probs.append(probs)
        merged = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (n_batch, length, e))
        attended = merged @ params[f"{prefix}/out_W"] + params[f"{prefix}/out_b"]
        state = _layer_norm(
            state + _dropout(attended),
            params[f"{prefix}/ln1_gamma"],
            params[f"{prefix}/ln1_beta"],
        )
        ff = ad.relu(state @ params[f"{prefix}/ffn_W1"] + params[f"{prefix}/ffn_b1"])
        ff = ff @ params[f"{prefix}/ffn_W2"] + params[f"{prefix}/ffn_b2"]
        state = _layer_norm(
            state + _dropout(ff),
            params[f"{prefix}/ln2_gamma"],
            params[f"{prefix}/ln2_beta"],
        )
        layer += 1

    query = params["dec/query"] @ params["dec/q_W"] + params["dec/q_b"]
    q = ad.transpose(ad.reshape(query, (1, 1, n_heads, e // n_heads)), (0, 2, 1, 3))
    k = _split_heads(state @ params["dec/k_W"] + params["dec/k_b"], n_heads)
    v = _split_heads(state @ params["dec/v_W"] + params["dec/v_b"], n_heads)
    context, probs = _attention(q, k, v)
    attention_probs.append(probs)
    pooled = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (n_batch, e))
    decoded = _dropout(pooled @ params["dec/out_W"] + params["dec/out_b"])
    logits = decoded @ params["head/W"] + params["head/b"]
    weights = ad.softmax(logits, axis=-1)
    if return_attention:
        return weights, attention_probs
    return weights


class _NeuralAllocatorMixin:
    """fit/predict plumbing shared by both neural estimators."""

    def _as_dataset(self, X, y) -> WindowedDataset:
        if isinstance(X, WindowedDataset):
            if y is not None:
                raise DataError("pass either a windowed dataset or (X, y), not both")
            return X
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return WindowedDataset(X, y, np.arange(len(X)), lookback=X.shape[1])

    def fit(self, X, y=None):
        dataset = self._as_dataset(X, y)
        self.params_, self.train_log_ = train(self, dataset, self.train_config())
        self.n_features_ = dataset.n_features
        self.n_assets_ = dataset.n_assets
        return self

    def predict(self, X, chunk: int = 256) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise DataError(f"expected (samples, lookback, features), got {X.shape}")
        log = self.train_log_
        if log is not None and log.norm_mean is not None:
            X = (X - log.norm_mean) / log.norm_std
        outs = []
        for start in range(0, len(X), chunk):
            outs.append(self.forward(self.params_, X[start : start + chunk], "eval", None).data)
        return np.concatenate(outs)


class LstmAllocator(_NeuralAllocatorMixin, BaseEstimator):
    """Single-layer LSTM with a softmax allocation head."""

    def __init__(
        self,
        hidden_units: int = 64,
        lookback: int = 50,
        batch_size: int = 64,
        epochs: int = 100,
        learning_rate: float = 0.001,
        l2: float = 0.0,
        validation_fraction: float = 0.10,
        seed: int = 0,
        keep_best: bool = False,
        normalize: bool = False,
    ):
        self.hidden_units = hidden_units
        self.lookback = lookback
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2 = l2
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.keep_best = keep_best
        self.normalize = normalize

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            l2=self.l2,
            validation_fraction=self.validation_fraction,
            seed=self.seed,
            keep_best=self.keep_best,
            normalize=self.normalize,
        )

    def build_params(self, rng, n_features: int, n_assets: int) -> ad.ParameterSet:
        config = LstmAllocatorConfig(
            input_features=n_features,
            n_assets=n_assets,
            hidden_units=self.hidden_units,
            lookback=self.lookback,
        )
        return init_parameters(config, rng)

    def forward(self, params, X, mode: str, rng=None) -> ad.Tensor:
        return lstm_forward(params, X, mode)


class TransformerAllocator(_NeuralAllocatorMixin, BaseEstimator):
    """Causal-encoder transformer with a single-query decoder head."""

    def __init__(
        self,
        embedding_size: int = 32,
        n_heads: int = 2,
        n_layers: int = 1,
        dropout: float = 0.05,
        lookback: int = 504,
        batch_size: int = 128,
        epochs: int = 50,
        learning_rate: float = 0.001,
        l2: float = 1e-5,
        validation_fraction: float = 0.10,
        seed: int = 0,
        keep_best: bool = False,
        normalize: bool = False,
    ):
        self.embedding_size = embedding_size
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.dropout = dropout
        self.lookback = lookback
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2 = l2
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.keep_best = keep_best
        self.normalize = normalize

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            l2=self.l2,
            validation_fraction=self.validation_fraction,
            seed=self.seed,
            keep_best=self.keep_best,
            normalize=self.normalize,
        )

    def build_params(self, rng, n_features: int, n_assets: int) -> ad.ParameterSet:
        config = TransformerAllocatorConfig(
            input_features=n_features,
            n_assets=n_assets,
            embedding_size=self.embedding_size,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            dropout=self.dropout,
            lookback=self.lookback,
            l2=self.l2,
        )
        return init_parameters(config, rng)

    def forward(self, params, X, mode: str, rng=None) -> ad.Tensor:
        return transformer_forward(
            params,
            X,
            mode,
            rng,
            n_heads=self.n_heads,
            dropout_rate=self.dropout,
        )
