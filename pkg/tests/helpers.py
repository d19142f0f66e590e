"""Shared test utilities: gradient checking and synthetic datasets."""

import numpy as np

from sharpefolio.autodiff import ParameterSet
from sharpefolio.rng import derive_rng


def dominant_asset_returns(n_days=420, seed=0):
    """Asset 1 daily Sharpe near 0.4, the rest near zero."""
    rng = derive_rng(seed, "dominant")
    r = np.empty((n_days, 4))
    r[:, 0] = rng.normal(0.002, 0.005, size=n_days)
    for j in range(1, 4):
        r[:, j] = rng.normal(0.0, 0.02, size=n_days)
    return r


def windows_from_returns(r, lookback):
    X = np.lib.stride_tricks.sliding_window_view(r, (lookback, r.shape[1]))
    X = X.reshape(-1, lookback, r.shape[1])[:-1].copy()
    y = r[lookback:]
    return X, y


def finite_difference_grads(loss_fn, params: ParameterSet, h: float = 1e-5) -> dict:
    """Central-difference gradient of ``loss_fn()`` w.r.t. every parameter value.

    ``loss_fn`` must re-run the forward pass from the current parameter data.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def assert_grads_close(analytic: dict, numeric: dict, rel_tol: float = 1e-4, abs_floor: float = 1e-7):
    """Relative comparison with an absolute floor for near-zero entries."""
    assert set(analytic) == set(numeric)
    for name in analytic:
        a = np.asarray(analytic[name], dtype=float)
        n = np.asarray(numeric[name], dtype=float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor / rel_tol)
        err = np.abs(a - n) / denom
        worst = float(err.max()) if err.size else 0.0
        assert worst < rel_tol, f"gradient mismatch for '{name}': max rel err {worst:.3e}"
