"""RMSprop with continuous per-sample learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    decay_factor: float = 0.985
    decay_samples: float = 1_000_000
    rho: float = 0.9
    epsilon: float = 1e-8
    accumulators: dict = field(default_factory=dict)
    samples_seen: int = 0

    def rate(self, samples_seen: float | None = None) -> float:
        """Learning rate after ``samples_seen`` training samples."""
        s = self.samples_seen if samples_seen is None else samples_seen
        return self.learning_rate * self.decay_factor ** (s / self.decay_samples)


def rmsprop_step(state: OptimizerState, params: dict, grads: dict, batch_size: int = 0) -> float:
    """Update ``params`` in place; returns the rate used.

    ``acc <- rho * acc + (1 - rho) * g**2``, ``p <- p - rate * g / (sqrt(acc) + eps)``.
    The rate is taken at the sample count before this batch, which then
    advances by ``batch_size``. Parameters without a gradient are untouched.
    """
    lr = state.rate()
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(p, dtype=np.float64)
        acc *= state.rho
        acc += (1.0 - state.rho) * np.square(g, dtype=np.float64)
        state.accumulators[name] = acc
        step = lr * g / (np.sqrt(acc) + state.epsilon)
        params[name] = (p - step).astype(p.dtype, copy=False)
    state.samples_seen += batch_size
    return lr
