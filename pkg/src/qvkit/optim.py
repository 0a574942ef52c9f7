"""Decoupled-weight-decay Adam on flat float32 parameter vectors.

The update is written in the multiplicative-decay form

    m' = b1*m + (1-b1)*g
    v' = b2*v + (1-b2)*g*g
    theta' = a_t*theta - b_t * m' / (sqrt(v') + eps)

with a_t = 1 - lr*weight_decay and the bias correction folded into
b_t = lr * sqrt(1 - b2**t) / (1 - b1**t). Every operation is elementwise,
which makes the step commute bitwise with signed permutations of the
coordinates (and with nothing weaker: see the diagonal-scaling
counterexample in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DivergenceError

if TYPE_CHECKING:
    from .trainer import TrainConfig


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamWState:
        return cls(m=np.zeros(n, np.float32), v=np.zeros(n, np.float32), t=0)


def adamw_step(
    state: AdamWState,
    params: np.ndarray,
    grads: np.ndarray,
    cfg: TrainConfig,
) -> tuple[AdamWState, np.ndarray]:
    """One optimizer step; pure function of (state, params, grads)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads, and moments must share one flat shape")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(step=state.t + 1, detail="non-finite gradient")
    t = state.t + 1
    b1 = np.float32(cfg.beta1)
    b2 = np.float32(cfg.beta2)
    m = b1 * state.m + (np.float32(1.0) - b1) * grads
    v = b2 * state.v + (np.float32(1.0) - b2) * (grads * grads)
    a_t = np.float32(1.0 - cfg.lr * cfg.weight_decay)
    b_t = np.float32(cfg.lr * np.sqrt(1.0 - cfg.beta2**t) / (1.0 - cfg.beta1**t))
    new_params = a_t * params - b_t * (m / (np.sqrt(v) + np.float32(cfg.eps_adam)))
    return AdamWState(m=m, v=v, t=t), new_params
