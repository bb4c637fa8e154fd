"""Neural-network ops on :class:`Tensor` with hand-written backward passes.

Image tensors are channels-last: ``[batch, height, width, channels]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, add, concat, getitem, make_result, matmul, mul, sigmoid, stack, tanh

Padding = Literal["same", "valid"]


class ShapeError(ValueError):
    """Operand extents are incompatible with the requested op."""


def _same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv_output_size(size: int, k: int, stride: int, padding: Padding) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: Padding = "same") -> Tensor:
    """2-D cross-correlation, ``x[B,H,W,Cin]`` with ``kernel[kh,kw,Cin,Cout]``.

    ``same`` padding gives ``ceil(H/stride)`` rows, with the odd padding cell
    placed at the bottom/right. ``valid`` gives ``floor((H-kh)/stride)+1``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    B, H, W, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"kernel expects {kcin} input channels but input has {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    if padding == "same":
        Ho, pt, pb = _same_padding(H, kh, stride)
        Wo, pl, pr = _same_padding(W, kw, stride)
    elif padding == "valid":
        if kh > H or kw > W:
            raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W} with valid padding")
        Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
    return _conv_im2col(x, kernel, bias, xp, stride, Ho, Wo, (pt, pl))


def _offset_view(xp: np.ndarray, i: int, j: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    return xp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride, :]


def _conv_im2col(x, kernel, bias, xp, stride, Ho, Wo, pad):
    B, H, W, cin = x.shape
    kh, kw, _, cout = kernel.shape
    # columns ordered (kh, kw, Cin) to match the kernel layout
    cols = np.concatenate([_offset_view(xp, i, j, stride, Ho, Wo) for i in range(kh) for j in range(kw)],
                          axis=-1).reshape(B * Ho * Wo, kh * kw * cin)
    wmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat + bias.data).reshape(B, Ho, Wo, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        dkernel = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        dbias = g2.sum(axis=0) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh, kw, cin)
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    _offset_view(dxp, i, j, stride, Ho, Wo)[...] += dcols[:, :, :, i, j, :]
            dx = dxp[:, pad[0]:pad[0] + H, pad[1]:pad[1] + W, :]
        return dx, dkernel, dbias

    return make_result(out, (x, kernel, bias), backward)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Max pooling without padding. Gradient goes to the first maximum in row-major order."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects [B,H,W,C], got {x.shape}")
    B, H, W, C = x.shape
    if H < window or W < window:
        raise ShapeError(f"maxpool2d needs H, W >= {window}, got {H}x{W}")
    Ho, Wo = (H - window) // stride + 1, (W - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    flat = win.reshape(B, Ho, Wo, C, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        di, dj = np.divmod(arg, window)
        b, oh, ow, c = np.indices(arg.shape, sparse=True)
        dx = np.zeros_like(x.data)
        index = (b, oh * stride + di, ow * stride + dj, c)
        if stride >= window:
            dx[index] = g  # windows are disjoint, so every target cell is hit at most once
        else:
            np.add.at(dx, index, g)
        return (dx,)

    return make_result(np.ascontiguousarray(out), (x,), backward)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.99, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation over every axis except the last.

    In training mode ``running_mean``/``running_var`` are updated in place as
    ``r <- momentum*r + (1-momentum)*batch_stat`` (biased batch variance).
    """
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},)")
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
        m = x.size // C

        def backward(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gamma.data
            dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
            return dx, dgamma, dbeta
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv_std

        def backward(g):
            return g * gamma.data * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = (gamma.data * xhat + beta.data).astype(x.dtype, copy=False)
    return make_result(out, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for ``x[B,F]``, ``weight[F,U]``."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} features but weight expects {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[1]} units")

    def backward(g):
        return (g @ weight.data.T if x.requires_grad else None,
                x.data.T @ g if weight.requires_grad else None,
                g.sum(axis=0) if bias.requires_grad else None)

    return make_result(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def mse_loss(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    """Mean of squared differences over all entries."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != t.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {t.shape}")
    diff = pred.data - t
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return make_result(out, parents, lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n)[:len(parents)])


# -------------------------------------------------------------------- LSTM
@dataclass
class LstmParams:
    """Weights of one LSTM layer, gates packed in the order input, forget, cell, output."""

    input_weight: Tensor  # [F, 4U]
    recurrent_weight: Tensor  # [U, 4U]
    bias: Tensor  # [4U]

    @property
    def units(self) -> int:
        return self.recurrent_weight.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.input_weight, self.recurrent_weight, self.bias]


@dataclass
class LstmState:
    hidden: Tensor
    cell: Tensor

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise ShapeError(f"hidden {self.hidden.shape} and cell {self.cell.shape} differ")


def zero_state(batch: int, units: int, dtype=np.float64) -> LstmState:
    return LstmState(Tensor(np.zeros((batch, units), dtype=dtype)), Tensor(np.zeros((batch, units), dtype=dtype)))


def _cell(projected: Tensor, state: LstmState, params: LstmParams) -> tuple[Tensor, LstmState]:
    U = params.units
    z = add(projected, matmul(state.hidden, params.recurrent_weight))
    i = sigmoid(getitem(z, (slice(None), slice(0, U))))
    f = sigmoid(getitem(z, (slice(None), slice(U, 2 * U))))
    g = tanh(getitem(z, (slice(None), slice(2 * U, 3 * U))))
    o = sigmoid(getitem(z, (slice(None), slice(3 * U, 4 * U))))
    c = add(mul(f, state.cell), mul(i, g))
    h = mul(o, tanh(c))
    return h, LstmState(h, c)


def lstm_decode_step(state: LstmState, x: Tensor, params: LstmParams) -> tuple[Tensor, LstmState]:
    """Advance one LSTM cell by one step; returns the output and the new state."""
    if x.ndim != 2 or x.shape[1] != params.input_weight.shape[0]:
        raise ShapeError(f"step input {x.shape} incompatible with input weight {params.input_weight.shape}")
    if state.hidden.shape != (x.shape[0], params.units):
        raise ShapeError(f"state shape {state.hidden.shape} != ({x.shape[0]}, {params.units})")
    return _cell(dense(x, params.input_weight, params.bias), state, params)


def lstm_layer(sequence: Tensor, params: LstmParams, state: LstmState | None = None) -> tuple[Tensor, LstmState]:
    """Run one LSTM layer over ``sequence[B,T,F]``; returns outputs ``[B,T,U]`` and the final state."""
    if sequence.ndim != 3:
        raise ShapeError(f"sequence must be [B,T,F], got {sequence.shape}")
    B, T, F = sequence.shape
    if T < 1:
        raise ShapeError("sequence must contain at least one step")
    if F != params.input_weight.shape[0]:
        raise ShapeError(f"sequence has {F} features but layer expects {params.input_weight.shape[0]}")
    U = params.units
    if state is None:
        state = zero_state(B, U, sequence.dtype)
    projected = dense(sequence.reshape(B * T, F), params.input_weight, params.bias).reshape(B, T, 4 * U)
    outputs = []
    for t in range(T):
        h, state = _cell(getitem(projected, (slice(None), t, slice(None))), state, params)
        outputs.append(h)
    return stack(outputs, axis=1), state


def lstm_encode(sequence: Tensor, layers: Sequence[LstmParams]) -> tuple[Tensor, list[LstmState]]:
    """Stacked LSTM encoder. Returns the top layer's outputs and each layer's final state."""
    if not layers:
        raise ValueError("lstm_encode needs at least one layer")
    finals = []
    out = sequence
    for params in layers:
        out, final = lstm_layer(out, params)
        finals.append(final)
    return out, finals


__all__ = [
    "ShapeError", "conv2d", "conv_output_size", "maxpool2d", "batchnorm", "dropout", "dense", "mse_loss",
    "LstmParams", "LstmState", "zero_state", "lstm_layer", "lstm_encode", "lstm_decode_step", "concat",
]
