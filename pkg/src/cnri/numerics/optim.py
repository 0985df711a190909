"""Adam with bias correction and the halving step schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cnri.errors import TrainingFault, ValidationError


def step_decay_lr(epoch, base_lr=1e-3, factor=0.5, every=50):
    """Learning rate for a 0-based epoch index: ``base_lr * factor ** (epoch // every)``."""
    return base_lr * factor ** (epoch // every)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValidationError(f"Adam betas must lie in (0, 1): {self.beta1}, {self.beta2}")


def adam_step(params, state, grads=None):
    """Update ``params`` (name -> Tensor) in place from their ``.grad``.

    ``grads`` may override the gradients (name -> array). Every gradient is
    checked before any parameter is touched so a fault leaves the model intact.
    """
    if grads is None:
        grads = {n: (np.zeros(p.shape) if p.grad is None else p.grad) for n, p in params.items()}
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingFault(f"non-finite gradient in parameters: {', '.join(bad)}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        new = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new.flags.writeable = False
        p.data = new
    return params
