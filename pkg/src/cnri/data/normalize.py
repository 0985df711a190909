"""Reference-body centering and per-feature z-scoring.

Positions are expressed relative to the reference body, whose own position
features therefore vanish; they are excluded from the statistics and kept at
exactly zero.  Velocities are z-scored as they are.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnri.errors import ValidationError

FEATURE_NAMES = ("x", "y", "vx", "vy")
N_POS = 2


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    reference_body: int = 0

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "reference_body": self.reference_body}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   int(d["reference_body"]))


def center(X, reference_body=0):
    """Subtract the reference body's position from every body's position."""
    X = np.array(X, dtype=np.float64)
    X[..., :N_POS] -= X[..., reference_body:reference_body + 1, :N_POS]
    return X


def _retained_values(Xc, reference_body):
    M = Xc.shape[-2]
    others = [m for m in range(M) if m != reference_body]
    pos = Xc[..., others, :N_POS].reshape(-1, N_POS)
    vel = Xc[..., N_POS:].reshape(-1, Xc.shape[-1] - N_POS)
    return pos, vel


def compute_stats(X, reference_body=0):
    """Statistics from an array (N, T, M, D) of training trajectories."""
    Xc = center(X, reference_body)
    pos, vel = _retained_values(Xc, reference_body)
    mean = np.concatenate([pos.mean(axis=0), vel.mean(axis=0)])
    std = np.concatenate([pos.std(axis=0), vel.std(axis=0)])
    for i, s in enumerate(std):
        if not s > 0:
            name = FEATURE_NAMES[i] if i < len(FEATURE_NAMES) else f"feature{i}"
            raise ValidationError(f"feature {name!r} has zero standard deviation")
    return NormalizationStats(mean, std, reference_body)


def _check(X, stats):
    if X.shape[-1] != stats.mean.shape[0]:
        raise ValidationError(
            f"feature dimension {X.shape[-1]} does not match statistics ({stats.mean.shape[0]})")


def normalize(X, stats):
    X = np.asarray(X, dtype=np.float64)
    _check(X, stats)
    Z = (center(X, stats.reference_body) - stats.mean) / stats.std
    Z[..., stats.reference_body, :N_POS] = 0.0
    return Z


def denormalize(Z, stats):
    """Inverse of :func:`normalize` on reference-centred data."""
    Z = np.asarray(Z, dtype=np.float64)
    _check(Z, stats)
    X = Z * stats.std + stats.mean
    X[..., stats.reference_body, :N_POS] = 0.0
    return X


def normalize_samples(samples, stats):
    from dataclasses import replace
    return [replace(s, trajectory=normalize(s.trajectory, stats)) for s in samples]


def denormalize_samples(samples, stats):
    from dataclasses import replace
    return [replace(s, trajectory=denormalize(s.trajectory, stats)) for s in samples]
