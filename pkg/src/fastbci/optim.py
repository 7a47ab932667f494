"""Gradient-descent and Adam parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGradientError
from .params import ParamSet


def _require_grads(params: ParamSet):
    for name, t in params.items():
        if t.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")


def sgd_step(params: ParamSet, lr: float) -> ParamSet:
    """In-place step p <- p - lr * grad(p)."""
    _require_grads(params)
    for _, t in params.items():
        t.data -= lr * t.grad
    return params


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        state = cls(beta1=beta1, beta2=beta2, eps=eps)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params: ParamSet, state: AdamState, lr: float) -> ParamSet:
    """In-place bias-corrected Adam update."""
    _require_grads(params)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        if m.shape != g.shape:
            raise MissingGradientError(f"Adam state shape mismatch for {name!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


class GradientDescent:
    """Plain gradient descent bound to a ParamSet."""

    kind = "gradient_descent"

    def __init__(self, params: ParamSet, lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        sgd_step(self.params, self.lr)


class Adam:
    """Adam bound to a ParamSet; moment state persists across steps."""

    kind = "adam"

    def __init__(self, params: ParamSet, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.state = AdamState.for_params(params, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr)


def make_optimizer(kind: str, params: ParamSet, lr: float):
    if kind == "adam":
        return Adam(params, lr)
    if kind == "gradient_descent":
        return GradientDescent(params, lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")
