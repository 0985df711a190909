"""Sources of the interaction latent Z.

Four regimes share one output convention: per ordered edge (i, j), i != j,
in the row-major order of :func:`cnri.numerics.edge_index`, a vector over
``K`` edge types.  Edge type 0 is the non-edge.  The fNRI encoder instead
emits ``K`` independent two-way logits per edge whose index-1 component is
the "on" state of that edge type.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnri.data.simulator import validate_adjacency
from cnri.errors import DimensionError, ValidationError
from cnri.numerics import ops
from cnri.numerics.layers import MLP, EdgeMLP, Linear, Module, edge_index, parameter
from cnri.numerics.tensor import Tensor

IG_LOGIT_GAP = 4.0


@dataclass
class InteractionLatent:
    """Dense (M, M, K) view of Z with an all-zero diagonal."""

    values: np.ndarray
    mode: str = "hard"
    style: str = "nri"

    @property
    def n_bodies(self):
        return self.values.shape[0]

    def edge_values(self):
        send, recv = edge_index(self.n_bodies)
        return self.values[send, recv]


def edges_to_matrix(edge_vals, n_bodies):
    """Scatter (..., E, K) edge vectors into (..., M, M, K) with a zero diagonal."""
    edge_vals = np.asarray(edge_vals)
    send, recv = edge_index(n_bodies)
    lead = edge_vals.shape[:-2]
    out = np.zeros(lead + (n_bodies, n_bodies) + edge_vals.shape[-1:])
    out[..., send, recv, :] = edge_vals
    return out


def perfect_graph(adjacency, n_types=2):
    """Hard one-hot latent: channel 1 on edges of ``adjacency``, channel 0 elsewhere."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    validate_adjacency(adjacency)
    send, recv = edge_index(adjacency.shape[0])
    edges = np.zeros((len(send), n_types))
    edges[np.arange(len(send)), adjacency[send, recv].astype(int)] = 1.0
    return InteractionLatent(edges_to_matrix(edges, adjacency.shape[0]), "hard", "nri")


class PerfectGraph(Module):
    """Constant encoder; owns no parameters."""

    style = "nri"

    def __init__(self, adjacency, n_types=2):
        self._latent = perfect_graph(adjacency, n_types)
        self._edges = self._latent.edge_values()

    def latent(self):
        return self._latent

    def edge_weights(self):
        return Tensor(self._edges[None])


class ImperfectGraph(Module):
    """Deterministic learnable graph initialised from a prior adjacency."""

    style = "nri"

    def __init__(self, adjacency, n_types=2, gap=IG_LOGIT_GAP):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        validate_adjacency(adjacency)
        self._n_bodies = adjacency.shape[0]
        send, recv = edge_index(self._n_bodies)
        logits = np.full((len(send), n_types), -gap / 2.0)
        logits[np.arange(len(send)), adjacency[send, recv].astype(int)] = gap / 2.0
        self.logits = parameter(logits)

    def edge_weights(self):
        return ops.reshape(ops.softmax(self.logits, axis=-1), (1,) + self.logits.shape)

    def latent(self, hard=True):
        if hard:
            vals = np.eye(self.logits.shape[1])[np.argmax(self.logits.data, axis=-1)]
            return InteractionLatent(edges_to_matrix(vals, self._n_bodies), "hard", "nri")
        probs = ops.softmax(Tensor(self.logits.data), axis=-1).data
        return InteractionLatent(edges_to_matrix(probs, self._n_bodies), "relaxed", "nri")


class _Trunk(Module):
    """f_emb, f_e1 and f_v1: node embedding and one round of message passing."""

    def __init__(self, n_frames, n_bodies, n_features, hidden, rng, dropout):
        self._shape = (n_frames, n_bodies, n_features)
        self._send, self._recv = edge_index(n_bodies)
        kw = dict(dropout=dropout, batchnorm=True)
        self.f_emb = MLP(n_frames * n_features, hidden, hidden, rng, **kw)
        self.f_e1 = EdgeMLP(hidden, hidden, hidden, rng, **kw)
        self.f_v1 = MLP(hidden, hidden, hidden, rng, **kw)

    def __call__(self, X, rng=None):
        X = np.asarray(X.data if isinstance(X, Tensor) else X, dtype=np.float64)
        if X.ndim == 3:
            X = X[None]
        if X.shape[1:] != self._shape:
            raise DimensionError(f"encoder expects trajectories of shape (B, {self._shape}), got {X.shape}")
        B, T, M, D = X.shape
        per_body = Tensor(np.transpose(X, (0, 2, 1, 3)).reshape(B, M, T * D))
        h0 = self.f_emb(per_body, rng)
        h1_edges = self.f_e1(h0, self._send, self._recv, rng)
        h1 = self.f_v1(ops.scatter_sum(h1_edges, self._recv, M, axis=1), rng)
        return h1


class NRIEncoder(Module):
    style = "nri"

    def __init__(self, n_frames, n_bodies, n_features, hidden, n_types, rng, dropout=0.0):
        self.trunk = _Trunk(n_frames, n_bodies, n_features, hidden, rng, dropout)
        self.f_e2 = EdgeMLP(hidden, hidden, hidden, rng, dropout=dropout, batchnorm=True)
        self.head = Linear(hidden, n_types, rng, "xavier", 0.1)
        self._n_types = n_types

    def __call__(self, X, rng=None):
        """Edge logits of shape (B, E, K)."""
        h1 = self.trunk(X, rng)
        return self.head(self.f_e2(h1, self.trunk._send, self.trunk._recv, rng))


class FNRIEncoder(Module):
    style = "fnri"

    def __init__(self, n_frames, n_bodies, n_features, hidden, n_types, rng, dropout=0.0):
        self.trunk = _Trunk(n_frames, n_bodies, n_features, hidden, rng, dropout)
        self.f_e2 = [EdgeMLP(hidden, hidden, hidden, rng, dropout=dropout, batchnorm=True)
                     for _ in range(n_types)]
        self.heads = [Linear(hidden, 2, rng, "xavier", 0.1) for _ in range(n_types)]
        self._n_types = n_types

    def __call__(self, X, rng=None):
        """Per-head two-way logits of shape (B, E, K, 2)."""
        h1 = self.trunk(X, rng)
        s, r = self.trunk._send, self.trunk._recv
        return ops.stack([head(f(h1, s, r, rng)) for f, head in zip(self.f_e2, self.heads)], axis=2)


def encode_nri(encoder, X, rng=None):
    return encoder(X, rng)


def encode_fnri(encoder, X, rng=None):
    return encoder(X, rng)


def posterior_probs(logits):
    """Softmax over the last axis: K types (NRI) or the on/off pair of each head (fNRI)."""
    return ops.softmax(logits if isinstance(logits, Tensor) else Tensor(logits), axis=-1)


def sample_concrete(logits, temperature, rng=None, mode="relaxed", style="nri", noise=None):
    """Concrete (Gumbel-softmax) sample from edge logits.

    ``noise`` overrides the Gumbel draw (pass ``0.0`` for the noise-free
    limit or a fixed array to freeze it).  ``mode="hard"`` returns the
    one-hot argmax of the perturbed logits without a gradient path.  For the
    fNRI style the result is the "on" component per head, shape (..., K).
    """
    if not temperature > 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    if noise is None:
        if rng is None:
            raise ValidationError("sample_concrete needs an rng when noise is not given")
        noise = ops.gumbel(logits.shape, rng)
    noise = np.broadcast_to(np.asarray(noise, dtype=np.float64), logits.shape)
    if mode == "hard":
        perturbed = logits.data + noise
        onehot = np.eye(logits.shape[-1])[np.argmax(perturbed, axis=-1)]
        return Tensor(onehot[..., 1] if style == "fnri" else onehot)
    if mode != "relaxed":
        raise ValidationError(f"unknown sampling mode {mode!r}")
    y = ops.softmax(ops.scale(ops.add(logits, Tensor(noise)), 1.0 / temperature), axis=-1)
    if style == "fnri":
        return ops.reshape(ops.index_last(y, 1), y.shape[:-1])
    return y
