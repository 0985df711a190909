"""Denormalised generation error and interaction-graph recovery."""
from __future__ import annotations

import itertools

import numpy as np

from cnri.data.normalize import denormalize
from cnri.errors import ValidationError
from cnri.numerics.layers import edge_index


def mse_denormalized(generated, truth, stats):
    """Mean squared error over frames 2..T, bodies and features, in physical units."""
    generated = np.asarray(generated, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if generated.shape != truth.shape:
        raise ValidationError(f"generated shape {generated.shape} != truth shape {truth.shape}")
    if generated.shape[-1] != stats.mean.shape[0]:
        raise ValidationError("normalisation statistics do not match the feature dimension")
    diff = denormalize(generated, stats) - denormalize(truth, stats)
    return float(np.mean(diff[..., 1:, :, :] ** 2))


def per_sample_mse(generated, truth, stats):
    diff = denormalize(generated, stats) - denormalize(truth, stats)
    return np.mean(diff[..., 1:, :, :] ** 2, axis=(-3, -2, -1))


def edge_types_from(probs_or_onehot):
    """Argmax edge type per edge; fNRI (E, K, 2) inputs become a K-bit pattern index."""
    arr = np.asarray(probs_or_onehot, dtype=np.float64)
    if arr.ndim == 3:
        bits = arr.argmax(axis=-1)
        return (bits * (2 ** np.arange(bits.shape[-1]))).sum(axis=-1), 2 ** bits.shape[-1]
    return arr.argmax(axis=-1), arr.shape[-1]


def edge_recovery(latent, ground_truth):
    """Fraction of off-diagonal pairs whose argmax type matches the true adjacency.

    ``latent`` holds per-edge probabilities or one-hots in edge-list form
    (E, K), dense form (M, M, K), or fNRI form (E, K, 2).  Predicted labels
    are matched to the truth under the best relabelling of edge types.
    """
    if ground_truth is None:
        raise ValidationError("edge recovery needs a ground-truth adjacency")
    gt = np.asarray(ground_truth)
    M = gt.shape[0]
    send, recv = edge_index(M)
    arr = np.asarray(latent, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[:2] == (M, M):
        arr = arr[send, recv]
    pred, n_types = edge_types_from(arr)
    truth = gt[send, recv].astype(int)
    best = 0.0
    if n_types <= 6:
        for perm in itertools.permutations(range(n_types)):
            best = max(best, float(np.mean(np.asarray(perm)[pred] == truth)))
    else:
        # greedy majority relabelling for large pattern spaces
        mapped = np.zeros_like(pred)
        for t in np.unique(pred):
            mapped[pred == t] = np.bincount(truth[pred == t], minlength=2).argmax()
        best = float(np.mean(mapped == truth))
    return best
