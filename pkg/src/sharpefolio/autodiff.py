"""Dense-tensor math with tape-based reverse-mode differentiation.

A ``Tensor`` wraps a float64 ndarray and records the operation that
produced it as a closure; calling :meth:`Tensor.backward` on a scalar
output walks the tape in reverse topological order and accumulates
gradients into every upstream node.  The tape is rebuilt on every
forward pass (define-by-run), which keeps recurrent unrolling trivial.

Also here: the named parameter collection, the Adam optimizer with
coupled L2, inverted dropout, and a flat binary checkpoint format.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import DataError, NumericalError

__all__ = [
    "Tensor",
    "ParameterSet",
    "Adam",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "softmax",
    "mean",
    "tsum",
    "std_population",
    "transpose",
    "reshape",
    "concat",
    "scale",
    "power",
    "dropout",
    "save_checkpoint",
    "load_checkpoint",
]


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by '{op}'")


class Tensor:
    """Immutable float64 array plus the backward closure that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, _children: tuple = (), _op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._prev = _children

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise DataError(f"backward requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        # iterative DFS: recursion would overflow on long unrolled tapes
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in seen:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _ensure_tensor(other))

    def __radd__(self, other):
        return add(_ensure_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _ensure_tensor(other))

    def __rsub__(self, other):
        return sub(_ensure_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return mul(self, power(other, -1.0))

    def __pow__(self, exponent):
        return power(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        out = Tensor(self.data[index], _children=(self,), _op="slice")

        def _bwd():
            buf = np.zeros_like(self.data)
            buf[index] += out.grad
            self._accumulate(buf)

        out._backward = _bwd
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"


def _ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """A tensor that participates in the forward pass but holds no gradient."""
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


# -- primitive ops --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _children=(a, b), _op="add")

    def _bwd():
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = _bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, _children=(a, b), _op="sub")

    def _bwd():
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(-out.grad, b.shape))

    out._backward = _bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, _children=(a, b), _op="mul")

    def _bwd():
        a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = _bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, _children=(a,), _op="scale")

    def _bwd():
        a._accumulate(out.grad * c)

    out._backward = _bwd
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    out = Tensor(a.data**exponent, _children=(a,), _op="power")

    def _bwd():
        a._accumulate(out.grad * exponent * a.data ** (exponent - 1.0))

    out._backward = _bwd
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DataError(f"matmul operands must be at least 2-D, got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _children=(a, b), _op="matmul")

    def _bwd():
        a._accumulate(_unbroadcast(out.grad @ b.data.swapaxes(-1, -2), a.shape))
        b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ out.grad, b.shape))

    out._backward = _bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    # evaluate on the non-saturating side to avoid overflow in exp
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, _children=(a,), _op="sigmoid")

    def _bwd():
        a._accumulate(out.grad * out.data * (1.0 - out.data))

    out._backward = _bwd
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), _children=(a,), _op="tanh")

    def _bwd():
        a._accumulate(out.grad * (1.0 - out.data**2))

    out._backward = _bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), _children=(a,), _op="relu")

    def _bwd():
        a._accumulate(out.grad * (a.data > 0.0))

    out._backward = _bwd
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), _children=(a,), _op="exp")

    def _bwd():
        a._accumulate(out.grad * out.data)

    out._backward = _bwd
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), _children=(a,), _op="log")

    def _bwd():
        a._accumulate(out.grad / a.data)

    out._backward = _bwd
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _children=(a,), _op="softmax")

    def _bwd():
        g = out.grad
        a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward = _bwd
    return out


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _children=(a,), _op="sum")

    def _bwd():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    out._backward = _bwd
    return out


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), _children=(a,), _op="mean")

    def _bwd():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape) / n)

    out._backward = _bwd
    return out


def std_population(a: Tensor) -> Tensor:
    """Population (1/N) standard deviation over all elements."""
    m = a.data.mean()
    centered = a.data - m
    s = np.sqrt(np.mean(centered**2))
    out = Tensor(s, _children=(a,), _op="std_population")

    def _bwd():
        if s == 0.0:
            a._accumulate(np.zeros_like(a.data))  # flat input: subgradient 0
            return
        a._accumulate(out.grad * centered / (a.data.size * s))

    out._backward = _bwd
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.transpose(axes), _children=(a,), _op="transpose")
    inverse = tuple(np.argsort(axes))

    def _bwd():
        a._accumulate(out.grad.transpose(inverse))

    out._backward = _bwd
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape), _children=(a,), _op="reshape")

    def _bwd():
        a._accumulate(out.grad.reshape(a.shape))

    out._backward = _bwd
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    out = Tensor(np.concatenate([t.data for t in parts], axis=axis), _children=tuple(parts), _op="concat")
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def _bwd():
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(out.grad[tuple(idx)])

    out._backward = _bwd
    return out


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise DataError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise DataError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(mask))


# -- parameters -----------------------------------------------------------


class ParameterSet:
    """Ordered, named collection of trainable tensors."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for name, t in params.items():
                self[name] = t

    def __setitem__(self, name: str, t: Tensor) -> None:
        t.requires_grad = True
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    @property
    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; parameters off the tape get zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def copy(self) -> "ParameterSet":
        return ParameterSet({name: parameter(t.data.copy()) for name, t in self.items()})

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


class Adam:
    """Adam with bias correction and coupled L2 (decay added to the gradient)."""

    def __init__(
        self,
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: ParameterSet) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise DataError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.first_moment.setdefault(name, np.zeros_like(p.data))
            v = self.second_moment.setdefault(name, np.zeros_like(p.data))
            m[:] = self.beta1 * m + (1.0 - self.beta1) * g
            v[:] = self.beta2 * v + (1.0 - self.beta2) * g**2
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


# -- checkpoints ----------------------------------------------------------

_MAGIC = b"SFCP"
_VERSION = 1


def save_checkpoint(params: ParameterSet, path) -> None:
    """Write parameters as: magic, version, count, then per-parameter records."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params)))
        for name, t in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParameterSet:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        params = ParameterSet()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(dims)
            params[name] = parameter(payload.astype(np.float64))
    return params
