"""Gaussian reconstruction likelihood and categorical KL terms."""
from __future__ import annotations

import numpy as np

from cnri.errors import ValidationError
from cnri.numerics import ops
from cnri.numerics.tensor import LN_2PI, Tensor

DEFAULT_EDGE_PRIOR = (0.91, 0.09)


def reconstruction_nll(X, means, sigma2):
    """Negative log-likelihood of frames 2..T under N(means, sigma2 I), batch-averaged.

    ``X`` is (B, T, M, D) data; ``means`` is the rollout Tensor of the same
    shape whose first frame is the given seed and is not scored.
    """
    if not sigma2 > 0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    X = np.asarray(X, dtype=np.float64)
    if not isinstance(means, Tensor):
        means = Tensor(means)
    if X.shape != means.shape:
        raise ValidationError(f"data shape {X.shape} != means shape {means.shape}")
    B = X.shape[0]
    idx = np.arange(1, X.shape[1])
    resid = ops.sub(ops.take(means, idx, axis=1), Tensor(X[:, 1:]))
    count = resid.data[0].size
    sq = ops.scale(ops.sum(ops.square(resid)), 1.0 / (2.0 * sigma2 * B))
    return ops.add(sq, Tensor(0.5 * count * (LN_2PI + np.log(sigma2))))


def _check_prior(prior):
    prior = np.asarray(prior, dtype=np.float64)
    if np.any(prior <= 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ValidationError(f"prior must be positive and sum to 1, got {prior}")
    return prior


def kl_categorical(log_q, prior):
    """Sum over edges (and fNRI heads) of KL(q || prior), averaged over the batch.

    ``log_q`` holds log-probabilities over the last axis with a leading batch
    axis; the prior broadcasts against that last axis.
    """
    prior = _check_prior(prior)
    if not isinstance(log_q, Tensor):
        log_q = Tensor(np.log(np.asarray(log_q, dtype=np.float64)))
    q = ops.exp(log_q)
    terms = ops.mul(q, ops.sub(log_q, Tensor(np.log(prior))))
    return ops.scale(ops.sum(terms), 1.0 / log_q.shape[0])


def kl_categorical_probs(q, prior):
    """Plain-array KL with the ``0 * ln 0 = 0`` convention (batch-averaged)."""
    prior = _check_prior(prior)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(prior)), 0.0)
    return float(terms.sum() / q.shape[0])
