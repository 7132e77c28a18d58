"""Adam with an inverse-square-root learning-rate schedule.

The rate warms up linearly to lr_max over `warmup` steps, peaks exactly at
the warm-up boundary, then decays as sqrt(warmup/t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor


def lr_schedule(t: int, lr_max: float, warmup: int) -> float:
    """Learning rate at step t (1-based): lr_max * min(t/warmup, sqrt(warmup/t))."""
    if t < 1:
        raise ContractError("lr_schedule is defined for steps t >= 1")
    return lr_max * min(t / warmup, math.sqrt(warmup / t))


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_max: float = 1e-4
    warmup: int = 4000

    @classmethod
    def for_params(cls, params: dict[str, Tensor], lr_max: float = 1e-4,
                   warmup: int = 4000) -> "OptimizerState":
        m = {name: np.zeros_like(p.data) for name, p in params.items()}
        v = {name: np.zeros_like(p.data) for name, p in params.items()}
        return cls(m=m, v=v, lr_max=lr_max, warmup=warmup)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: OptimizerState) -> float:
    """Apply one bias-corrected Adam update in place; returns the lr used.

    Parameters missing from `grads` (or with grad None) are treated as
    having zero gradient, so momentum still applies to them.
    """
    lr = lr_schedule(state.t + 1, state.lr_max, state.warmup)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** (state.t + 1)
    bc2 = 1.0 - b2 ** (state.t + 1)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {name} shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.data.shape:
            raise ShapeError(f"optimizer state shape mismatch for {name}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    state.t += 1
    return lr
