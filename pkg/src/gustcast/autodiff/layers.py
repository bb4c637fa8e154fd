"""Parameter-holding layers built on the functional ops."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform in +-sqrt(3/fan_in), i.e. variance 1/fan_in."""
    limit = np.sqrt(3.0 / max(fan_in, 1))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Base class: discovers parameters, buffers and sub-modules from attributes."""

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)) and not name.startswith("_"):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in self._children():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[prefix + name] = value
            else:
                out.update(value.named_parameters(prefix + name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in getattr(self, "_buffers", {}).items()}
        for name, value in self._children():
            if isinstance(value, Module):
                out.update(value.named_buffers(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params, buffers = self.named_parameters(), self.named_buffers()
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in buffers.items():
            b[...] = state[k]


class Conv2D(Module):
    def __init__(self, in_channels: int, filters: int, kernel_size: int, stride: int = 1,
                 padding: F.Padding = "same", rng: np.random.Generator | None = None, dtype=DEFAULT_DTYPE,
                 use_bias: bool = True):
        rng = rng or np.random.default_rng(0)
        fan_in = kernel_size * kernel_size * in_channels
        self.kernel = fan_in_uniform(rng, (kernel_size, kernel_size, in_channels, filters), fan_in, dtype)
        # a constant zero bias is not a parameter (used when batchnorm follows and would cancel it)
        self.bias = zeros_param((filters,), dtype) if use_bias else Tensor(np.zeros(filters, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = zeros_param((channels,), dtype)
        self._buffers = {"running_mean": np.zeros(channels, dtype=dtype),
                         "running_var": np.ones(channels, dtype=dtype)}
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(x, self.gamma, self.beta, self._buffers["running_mean"], self._buffers["running_var"],
                           self.training, self.momentum, self.eps)


class Dense(Module):
    def __init__(self, in_features: int, units: int, rng: np.random.Generator | None = None, dtype=DEFAULT_DTYPE):
        rng = rng or np.random.default_rng(0)
        self.weight = fan_in_uniform(rng, (in_features, units), in_features, dtype)
        self.bias = zeros_param((units,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.dense(x, self.weight, self.bias)


class LSTM(Module):
    """One LSTM layer; the forget-gate bias starts at 1."""

    def __init__(self, in_features: int, units: int, rng: np.random.Generator | None = None, dtype=DEFAULT_DTYPE):
        rng = rng or np.random.default_rng(0)
        self.input_weight = fan_in_uniform(rng, (in_features, 4 * units), in_features, dtype)
        self.recurrent_weight = fan_in_uniform(rng, (units, 4 * units), units, dtype)
        bias = np.zeros(4 * units, dtype=dtype)
        bias[units:2 * units] = 1.0
        self.bias = Tensor(bias, requires_grad=True)
        self.units = units

    @property
    def params(self) -> F.LstmParams:
        return F.LstmParams(self.input_weight, self.recurrent_weight, self.bias)

    def forward(self, sequence: Tensor, state: F.LstmState | None = None):
        return F.lstm_layer(sequence, self.params, state)

    def step(self, state: F.LstmState, x: Tensor):
        return F.lstm_decode_step(state, x, self.params)
