"""Parameterised layers built on :mod:`ops`.

Modules discover parameters and sub-modules by scanning their attributes
(including lists of modules), so ``named_parameters`` paths mirror attribute
names, e.g. ``lstm.layers.0.w_ih``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ConfigError, ShapeError, StateError
from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that requires gradients and is owned by a module."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    training: bool = True
    _buffer_names: tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for b in mod._buffer_names:
                value = getattr(mod, b)
                if value is not None:
                    yield (f"{mod_name}.{b}" if mod_name else b), value

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to(self, dtype) -> "Module":
        """Cast parameters and buffers in place (used for 64-bit gradient checks)."""
        dtype = np.dtype(dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, m in self.named_modules():
            for b in m._buffer_names:
                value = getattr(m, b)
                if value is not None:
                    setattr(m, b, value.astype(dtype))
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(v, copy=True) for name, v in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for name, p in params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"parameter {name!r}: checkpoint shape {value.shape} vs model {p.shape}")
            p.data = value.astype(p.dtype, copy=True)
        for mod_name, mod in self.named_modules():
            for b in mod._buffer_names:
                key = f"{mod_name}.{b}" if mod_name else b
                if key in state:
                    setattr(mod, b, np.array(state[key], copy=True))


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "xavier"):
        self.in_dim, self.out_dim = in_dim, out_dim
        if init == "xavier":
            w = _uniform(rng, np.sqrt(6.0 / (in_dim + out_dim)), (in_dim, out_dim))
        elif init == "zeros":
            w = np.zeros((in_dim, out_dim))
        elif init == "identity":
            if in_dim != out_dim:
                raise ConfigError(f"identity init needs a square layer, got {in_dim}x{out_dim}")
            w = np.eye(in_dim)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear: expected last dim {self.in_dim}, got {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class PReLU(Module):
    def __init__(self, num: int = 1, init: float = 0.25):
        self.slope = Parameter(np.full(num, init))

    def forward(self, x: Tensor) -> Tensor:
        return ops.prelu(x, self.slope)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm1d(Module):
    """Normalise features over all leading axes (batch, and time for sequences).

    Train mode uses batch statistics and updates running estimates; eval mode
    uses the running estimates and refuses to run before any were collected.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.dim, self.momentum, self.eps = dim, momentum, eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"BatchNorm1d: expected last dim {self.dim}, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        if self.training:
            mu = ops.mean(x, axes, keepdims=True)
            centered = x - mu
            var = ops.mean(centered * centered, axes, keepdims=True)
            n = int(np.prod(x.shape[:-1]))
            bm = mu.data.reshape(-1)
            bv = var.data.reshape(-1) * (n / max(n - 1, 1))
            if self.running_mean is None:
                self.running_mean, self.running_var = bm.copy(), bv.copy()
            else:
                m = self.momentum
                self.running_mean = (1 - m) * self.running_mean + m * bm
                self.running_var = (1 - m) * self.running_var + m * bv
            xhat = centered / ops.sqrt(var + self.eps)
        else:
            if self.running_mean is None:
                raise StateError("BatchNorm1d in eval mode has no accumulated statistics")
            xhat = (x - self.running_mean.astype(x.dtype)) / np.sqrt(self.running_var + self.eps).astype(x.dtype)
        return xhat * self.weight + self.bias


class LSTM(Module):
    """Stack of LSTM layers; input and output are batch-first ``[B, T, D]``."""

    def __init__(self, input_dim: int, hidden: int, num_layers: int, rng: np.random.Generator):
        self.hidden = hidden
        self.layers = [LSTMLayer(input_dim if i == 0 else hidden, hidden, rng) for i in range(num_layers)]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class LSTMLayer(Module):
    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Parameter(_uniform(rng, bound, (input_dim, 4 * hidden)))
        self.w_hh = Parameter(_uniform(rng, bound, (hidden, 4 * hidden)))
        self.bias = Parameter(_uniform(rng, bound, (4 * hidden,)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.lstm(x, self.w_ih, self.w_hh, self.bias)

