"""Conditional autoregressive graph decoder.

The condition vector enters twice: as the initial node hidden states and as
a virtual edge message added to every node's aggregate at every step.
Rollouts are closed loop: after the seed frame the decoder only ever sees
its own outputs.
"""
from __future__ import annotations

import numpy as np

from cnri.errors import DecodeFault, DimensionError, ValidationError
from cnri.numerics import ops
from cnri.numerics.layers import MLP, EdgeMLP, GRUCell, Module, edge_index
from cnri.numerics.tensor import Tensor

DEFAULT_SIGMA2 = 5e-5


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class ConditionalDecoder(Module):
    """Graph decoder with ``n_msg_types`` gated message functions.

    Edge weights passed to :meth:`decode_step` have shape (B or 1, E,
    n_msg_types); the caller drops the non-edge channel beforehand, so the
    non-edge type never owns a message function.
    """

    def __init__(self, n_bodies, n_features, cond_dim, hidden, n_msg_types, rng,
                 dropout=0.0, use_condition=True, use_virtual_edge=True):
        self.n_bodies, self.n_features, self.cond_dim, self.hidden = n_bodies, n_features, cond_dim, hidden
        self._send, self._recv = edge_index(n_bodies)
        self._use_condition = use_condition
        self._use_virtual_edge = use_virtual_edge and use_condition
        kw = dict(dropout=dropout, init="uniform", bias_fill=None)
        if use_condition:
            self.f_c_hid = MLP(cond_dim, hidden, n_bodies * hidden, rng, out_activation=False, **kw)
            self.f_c_msgs = MLP(cond_dim, hidden, hidden, rng, out_activation=False, **kw)
        self.msg_fns = [EdgeMLP(hidden, hidden, hidden, rng, **kw) for _ in range(n_msg_types)]
        self.gru = GRUCell(hidden + n_features, hidden, rng)
        self.f_out = MLP(hidden, hidden, n_features, rng, out_activation=False, **kw)
        # start close to a frozen trajectory
        self.f_out.fc2.weight.data = self.f_out.fc2.weight.data * 0.1
        self.f_out.fc2.bias.data = np.zeros(n_features)

    @property
    def n_msg_types(self):
        return len(self.msg_fns)

    def _check_condition(self, c):
        c = np.asarray(c.data if isinstance(c, Tensor) else c, dtype=np.float64)
        if c.ndim == 1:
            c = c[None]
        if c.shape[-1] != self.cond_dim:
            raise DimensionError(f"condition vector has dimension {c.shape[-1]}, expected {self.cond_dim}")
        return Tensor(c)

    def init_hidden(self, c, rng=None):
        """Initial node states (B, M, H) from the condition vector."""
        c = self._check_condition(c)
        B = c.shape[0]
        if not self._use_condition:
            return Tensor(np.zeros((B, self.n_bodies, self.hidden)))
        return ops.reshape(self.f_c_hid(c, rng), (B, self.n_bodies, self.hidden))

    def virtual_edge_message(self, c, rng=None):
        """Virtual-edge message (B, H), or ``None`` when ablated."""
        c = self._check_condition(c)
        if not self._use_virtual_edge:
            return None
        return self.f_c_msgs(c, rng)

    def decode_step(self, hidden, x_hat, edge_weights, msgs=None, rng=None, step=None):
        """One message-passing + GRU step; returns ``(mean_next, hidden_next)``."""
        x_hat = _as_tensor(x_hat)
        B, M, H = hidden.shape
        if x_hat.shape != (B, M, self.n_features):
            raise DimensionError(f"frame shape {x_hat.shape} != {(B, M, self.n_features)}")
        if edge_weights.shape[-1] != self.n_msg_types or edge_weights.shape[-2] != len(self._send):
            raise DimensionError(
                f"edge weights {edge_weights.shape} do not match {len(self._send)} edges x "
                f"{self.n_msg_types} message types")
        edge_msg = None
        for k, fn in enumerate(self.msg_fns):
            gate = ops.index_last(edge_weights, k)
            m = ops.mul(fn(hidden, self._send, self._recv, rng), gate)
            edge_msg = m if edge_msg is None else ops.add(edge_msg, m)
        if edge_msg is None:
            agg = Tensor(np.zeros((B, M, H)))
        else:
            agg = ops.scatter_sum(edge_msg, self._recv, M, axis=1)
        if msgs is not None:
            agg = ops.add(agg, ops.reshape(msgs, (msgs.shape[0], 1, H)))
        h_next = self.gru(ops.concat([agg, x_hat], axis=-1), hidden)
        if not np.all(np.isfinite(h_next.data)):
            raise DecodeFault("non-finite hidden state", step=step)
        mean = ops.add(x_hat, self.f_out(h_next, rng))
        return mean, h_next

    def rollout(self, x1, c, edge_weights, n_frames, rng=None, stochastic=False, sigma2=DEFAULT_SIGMA2):
        """Generate ``n_frames`` frames from the seed frame ``x1`` (B, M, D).

        Returns ``(means, sampled)``, both Tensors of shape (B, T, M, D) whose
        first frame is ``x1``.  Only ``x1`` is read from data; every later input
        is the decoder's own output (the mean, or a Gaussian draw around it when
        ``stochastic``).
        """
        if n_frames < 2:
            raise ValidationError(f"rollout needs at least 2 frames, got {n_frames}")
        x1 = np.asarray(x1.data if isinstance(x1, Tensor) else x1, dtype=np.float64)
        if x1.ndim == 2:
            x1 = x1[None]
        if x1.shape[1:] != (self.n_bodies, self.n_features):
            raise DimensionError(f"seed frame shape {x1.shape} != (B, {self.n_bodies}, {self.n_features})")
        edge_weights = _as_tensor(edge_weights)
        hidden = self.init_hidden(c, rng)
        if hidden.shape[0] != x1.shape[0]:
            raise DimensionError(f"batch mismatch: {hidden.shape[0]} conditions vs {x1.shape[0]} seed frames")
        msgs = self.virtual_edge_message(c, rng)
        seed = Tensor(x1)
        x_hat = seed
        means, sampled = [seed], [seed]
        for t in range(1, n_frames):
            mean, hidden = self.decode_step(hidden, x_hat, edge_weights, msgs, rng, step=t + 1)
            if stochastic:
                if rng is None:
                    raise ValidationError("stochastic rollout needs an rng")
                x_hat = ops.add(mean, Tensor(np.sqrt(sigma2) * rng.standard_normal(mean.shape)))
            else:
                x_hat = mean
            means.append(mean)
            sampled.append(x_hat)
        return ops.stack(means, axis=1), ops.stack(sampled, axis=1)
