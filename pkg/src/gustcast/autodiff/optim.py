from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: OptimizerState, allow_missing: bool = False) -> OptimizerState:
    """Bias-corrected Adam update applied to ``params`` in place.

    Raises :class:`MissingGradientError` when a parameter has no gradient,
    unless ``allow_missing`` is set, in which case it is treated as zero.
    """
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")
    if not allow_missing:
        for p in params:
            if p.grad is None:
                raise MissingGradientError(f"parameter {p.name or p.shape} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], learning_rate: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(learning_rate, beta1, beta2, epsilon)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD:
    def __init__(self, params: Sequence[Tensor], learning_rate: float = 0.01):
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGradientError(f"parameter {p.name or p.shape} has no gradient")
            p.data = p.data - self.learning_rate * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
