from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, in place. Only keys present in ``grads`` are touched."""
    for k, g in grads.items():
        if np.shape(params[k]) != np.shape(g):
            raise ShapeMismatch(f"{k}: parameter {np.shape(params[k])} vs gradient {np.shape(g)}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(g, dtype=np.float64)
            state.v[k] = np.zeros_like(g, dtype=np.float64)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
