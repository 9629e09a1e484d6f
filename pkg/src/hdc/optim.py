"""SGD with momentum, L2 regularization, and inverse-time lr decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import Tensor


class OptimError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    velocities: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
             state: OptimizerState, lr: float, momentum: float,
             l2: float, decay: float) -> float:
    """One update: g <- grad + l2*p; v <- momentum*v + g; p <- p - lr_t*v,
    with lr_t = lr / (1 + decay*step). Returns the lr_t used."""
    lr_t = lr / (1.0 + decay * state.step)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g.sum()):
            raise OptimError(f"non-finite gradient for {name}; step aborted")
        if g.shape != p.data.shape:
            raise OptimError(
                f"gradient shape {g.shape} != param shape {p.data.shape} "
                f"for {name}")
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        g = g + np.asarray(l2, dtype=p.dtype) * p.data
        v = np.asarray(momentum, dtype=p.dtype) * v + g
        state.velocities[name] = v
        p.data = p.data - np.asarray(lr_t, dtype=p.dtype) * v
    state.step += 1
    return lr_t
