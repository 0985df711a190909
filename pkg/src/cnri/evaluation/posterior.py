"""Aggregate posterior over the training split."""
from __future__ import annotations

import numpy as np

from cnri.encoders import posterior_probs
from cnri.errors import ValidationError
from cnri.numerics.tensor import no_grad


def aggregate_posterior(model, X_train, batch_size=64):
    """Average of per-sample edge posteriors, evaluated in inference mode.

    Returns (E, K) for the NRI encoder or (E, K, 2) for fNRI.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    if len(X_train) == 0:
        raise ValidationError("aggregate posterior needs at least one training trajectory")
    return per_sample_posteriors(model, X_train, batch_size).mean(axis=0)


def per_sample_posteriors(model, X, batch_size=64):
    if not model.variational:
        raise ValidationError(f"regime {model.regime!r} has no posterior")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            chunks = [posterior_probs(model.encoder(X[i:i + batch_size])).data
                      for i in range(0, len(X), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(chunks, axis=0)
