"""Group-aware k-fold splitting with a validation carve-out."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cnri.errors import ValidationError


@dataclass
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _group_ids(samples_or_ids):
    return np.array([getattr(s, "group_id", s) for s in samples_or_ids], dtype=int)


def grouped_kfold(samples, k=3, seed=0, val_fraction=0.2):
    """Sample-index folds where every group lives in exactly one set.

    Groups are shuffled and cut into ``k`` test blocks.  For each fold the
    remaining groups are shuffled again and ``ceil(val_fraction * n)`` of
    them (at least one) become validation.
    """
    gids = _group_ids(samples)
    groups = np.unique(gids)
    if len(groups) < k + 2:
        raise ValidationError(f"need at least {k + 2} groups for {k}-fold splitting, got {len(groups)}")
    rng = np.random.default_rng(seed)
    blocks = np.array_split(rng.permutation(groups), k)
    folds = []
    for test_groups in blocks:
        rest = rng.permutation(np.setdiff1d(groups, test_groups))
        n_val = min(max(1, math.ceil(val_fraction * len(rest))), len(rest) - 1)
        val_groups, train_groups = rest[:n_val], rest[n_val:]
        folds.append(Fold(
            train=np.flatnonzero(np.isin(gids, train_groups)),
            val=np.flatnonzero(np.isin(gids, val_groups)),
            test=np.flatnonzero(np.isin(gids, test_groups)),
        ))
    return folds


def check_no_leakage(samples, folds):
    gids = _group_ids(samples)
    for f in folds:
        sets = [set(gids[f.train]), set(gids[f.val]), set(gids[f.test])]
        for a in range(3):
            for b in range(a + 1, 3):
                if sets[a] & sets[b]:
                    return False
    return True


def regime_balance(samples, folds):
    """Per fold and split, the count of samples per regime label (reported, not enforced)."""
    labels = np.array([s.regime_label for s in samples])
    report = []
    for i, f in enumerate(folds):
        row = {"fold": i}
        for split in ("train", "val", "test"):
            idx = getattr(f, split)
            vals, counts = np.unique(labels[idx], return_counts=True)
            row[split] = {int(v): int(c) for v, c in zip(vals, counts)}
        report.append(row)
    return report
