"""cNRI model: a latent source (one of four regimes) feeding the conditional decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnri.decoder import ConditionalDecoder
from cnri.encoders import (
    FNRIEncoder, ImperfectGraph, NRIEncoder, PerfectGraph, sample_concrete,
)
from cnri.errors import MissingArtifactError, ValidationError
from cnri.numerics import ops
from cnri.numerics.layers import Module
from cnri.numerics.tensor import Tensor, no_grad
from cnri.training.objectives import kl_categorical, reconstruction_nll

REGIMES = ("pg", "ig", "nri", "fnri")


@dataclass
class LossParts:
    total: Tensor
    nll: Tensor
    kl: Tensor | None
    means: Tensor


class CNRIModel(Module):
    """Encoder/decoder pair for one regime.

    ``pg`` uses a fixed graph, ``ig`` a learnable deterministic graph, ``nri``
    and ``fnri`` a variational encoder with a concrete relaxation.  With
    ``use_condition=False`` the condition pathways are removed, giving the
    unconditional NRI baseline on the same code path.
    """

    def __init__(self, regime, n_frames, n_bodies, n_features, cond_dim, adjacency=None, *,
                 n_edge_types=2, encoder_hidden=64, decoder_hidden=128, dropout=0.1,
                 temperature=0.5, sigma2=5e-5, edge_prior=(0.91, 0.09),
                 use_condition=True, use_virtual_edge=True, stochastic_feed=False, seed=0):
        if regime not in REGIMES:
            raise ValidationError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        self.regime = regime
        self.n_frames, self.n_bodies, self.n_features, self.cond_dim = n_frames, n_bodies, n_features, cond_dim
        self.n_edge_types = n_edge_types
        self.temperature, self.sigma2 = temperature, sigma2
        self.edge_prior = tuple(edge_prior)
        self.stochastic_feed = stochastic_feed
        rng = np.random.default_rng(seed)
        if regime in ("pg", "ig") and adjacency is None:
            raise ValidationError(f"regime {regime!r} needs an adjacency matrix")
        if regime == "pg":
            self.graph = PerfectGraph(adjacency, n_edge_types)
        elif regime == "ig":
            self.graph = ImperfectGraph(adjacency, n_edge_types)
        elif regime == "nri":
            self.encoder = NRIEncoder(n_frames, n_bodies, n_features, encoder_hidden, n_edge_types, rng, dropout)
        else:
            self.encoder = FNRIEncoder(n_frames, n_bodies, n_features, encoder_hidden, n_edge_types, rng, dropout)
        n_msg = n_edge_types if regime == "fnri" else n_edge_types - 1
        self.decoder = ConditionalDecoder(n_bodies, n_features, cond_dim, decoder_hidden, n_msg, rng,
                                          dropout=dropout, use_condition=use_condition,
                                          use_virtual_edge=use_virtual_edge)
        self._aggregate = None

    @property
    def style(self):
        return "fnri" if self.regime == "fnri" else "nri"

    @property
    def variational(self):
        return self.regime in ("nri", "fnri")

    def decoder_weights(self, z):
        """Drop the non-edge channel of a categorical latent (fNRI gates pass through)."""
        if self.style == "fnri":
            return z
        return ops.take(z, np.arange(1, z.shape[-1]), axis=-1)

    def loss_terms(self, X, C, rng=None, noise=None):
        """Negative objective for a normalised batch (B, T, M, D) with conditions (B, d)."""
        X = np.asarray(X, dtype=np.float64)
        kl = None
        if self.variational:
            logits = self.encoder(X, rng)
            z = sample_concrete(logits, self.temperature, rng, "relaxed", self.style, noise)
            kl = kl_categorical(ops.log_softmax(logits, axis=-1), self.edge_prior)
        else:
            z = self.graph.edge_weights()
        means, _ = self.decoder.rollout(X[:, 0], C, self.decoder_weights(z), X.shape[1], rng,
                                        stochastic=self.stochastic_feed, sigma2=self.sigma2)
        nll = reconstruction_nll(X, means, self.sigma2)
        total = nll if kl is None else ops.add(nll, kl)
        return LossParts(total, nll, kl, means)

    # ----------------------------------------------------------- generation

    def set_aggregate_posterior(self, probs):
        self._aggregate = None if probs is None else np.asarray(probs, dtype=np.float64)

    @property
    def aggregate_posterior(self):
        return self._aggregate

    def generation_latent(self, rng=None, sample=False):
        """Hard edge weights (1, E, n_msg_types) used at generation time."""
        if self.regime == "pg":
            z = self.graph.edge_weights().data
        elif self.regime == "ig":
            z = self.graph.latent(hard=True).edge_values()[None]
        else:
            if self._aggregate is None:
                raise MissingArtifactError(
                    f"regime {self.regime!r} needs an aggregate posterior for generation")
            probs = self._aggregate
            if sample:
                if rng is None:
                    raise ValidationError("sampling the aggregate posterior needs an rng")
                cum = probs.cumsum(axis=-1)
                draw = (rng.random(probs.shape[:-1] + (1,)) > cum).sum(axis=-1)
            else:
                draw = probs.argmax(axis=-1)
            draw = np.minimum(draw, probs.shape[-1] - 1)
            onehot = np.eye(probs.shape[-1])[draw]
            z = (onehot[..., 1] if self.style == "fnri" else onehot)[None]
        return self.decoder_weights(Tensor(z)).data

    def generate(self, x1, C, n_frames=None, rng=None, sample=False, edge_weights=None):
        """Closed-loop mean trajectories (B, T, M, D) from seed frames and conditions."""
        n_frames = n_frames or self.n_frames
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                w = self.generation_latent(rng, sample) if edge_weights is None else edge_weights
                means, _ = self.decoder.rollout(x1, C, Tensor(w), n_frames)
        finally:
            self.train(was_training)
        return means.data.copy()

    def config_dict(self):
        return {"regime": self.regime, "n_frames": self.n_frames, "n_bodies": self.n_bodies,
                "n_features": self.n_features, "cond_dim": self.cond_dim,
                "n_edge_types": self.n_edge_types, "temperature": self.temperature,
                "sigma2": self.sigma2, "edge_prior": list(self.edge_prior)}
