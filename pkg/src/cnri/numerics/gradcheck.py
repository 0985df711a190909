"""Central finite differences, the independent check on reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from cnri.numerics.tensor import grad_of


def finite_difference_gradient(loss_fn, params, eps=1e-5):
    """Central-difference gradient of ``loss_fn()`` w.r.t. each tensor in ``params``.

    ``loss_fn`` takes no arguments and returns a scalar (float or Tensor); it
    must be deterministic, so any randomness has to be re-seeded inside it.
    """
    out = []
    for p in params:
        base = p.data.copy()
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            for sign in (1.0, -1.0):
                bumped = flat.copy()
                bumped[i] += sign * eps
                arr = bumped.reshape(base.shape)
                arr.flags.writeable = False
                p.data = arr
                val = loss_fn()
                val = np.asarray(getattr(val, "data", val)).item()
                g.reshape(-1)[i] += sign * val
        g /= 2.0 * eps
        base.flags.writeable = False
        p.data = base
        out.append(g)
    return out


def backprop_gradient(loss_fn, params):
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return [grad_of(p).copy() for p in params]


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)`` over all tensors."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst
