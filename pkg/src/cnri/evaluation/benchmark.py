"""Cross-validated comparison of every model kind, generation from checkpoints
and interaction-map export."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from cnri import baselines
from cnri.data.dataset import shared_graph
from cnri.data.normalize import NormalizationStats, denormalize, normalize
from cnri.encoders import edges_to_matrix
from cnri.errors import MissingArtifactError, ValidationError
from cnri.evaluation.metrics import edge_recovery, edge_types_from, per_sample_mse
from cnri.evaluation.posterior import per_sample_posteriors
from cnri.training.trainer import (
    TrainingConfig, build_model, fit, fold_arrays, fold_seed, model_checkpoint, model_from_checkpoint,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CNRI_MODELS = ("pg", "ig", "nri", "fnri")
MEAN_MODELS = {"mean": "global", "improved_mean": "per_regime"}
RNN_MODELS = {"rnn": "rnn", "gru": "gru", "lstm": "lstm"}
MODEL_NAMES = tuple(MEAN_MODELS) + tuple(RNN_MODELS) + ("nri_uncond",) + CNRI_MODELS


def parse_models(spec):
    names = [m.strip() for m in (spec.split(",") if isinstance(spec, str) else spec) if m.strip()]
    unknown = [m for m in names if m not in MODEL_NAMES]
    if unknown:
        raise ValidationError(f"unknown model(s) {unknown}; choose from {list(MODEL_NAMES)}")
    if len(set(names)) != len(names):
        raise ValidationError(f"model list {names} repeats an entry")
    if not names:
        raise ValidationError("no models requested")
    return names


def needs_training(names):
    return any(n not in MEAN_MODELS for n in names)


@dataclass
class TrainedModel:
    name: str
    fold: int
    model: object
    checkpoint: object
    stats: NormalizationStats
    history: list = field(default_factory=list)
    seconds: float = 0.0


def train_named_model(name, samples, fold, fold_id, config, splits=None, stats=None):
    """Fit one named model on a fold; means are closed-form, the rest use :func:`fit`."""
    if splits is None:
        stats, splits = fold_arrays(samples, fold)
    Xtr, Ctr = splits["train"]
    T, M, D = Xtr.shape[1:]
    started = time.perf_counter()
    history = []
    if name in MEAN_MODELS:
        labels = np.array([samples[i].regime_label for i in fold.train])
        model = baselines.fit_mean(Xtr, labels, MEAN_MODELS[name])
        ckpt = baselines.mean_checkpoint(model, stats, fold_id)
    else:
        seed = int(fold_seed(config.seed, fold_id, 0).integers(2 ** 31))
        rng = fold_seed(config.seed, fold_id, 1)
        if name in RNN_MODELS:
            model = baselines.build_recurrent(RNN_MODELS[name], config, T, M, D, Ctr.shape[1], seed=seed)
        else:
            cfg = baselines.nri_unconditional(config) if name == "nri_uncond" else replace(config, regime=name)
            adjacency = shared_graph(samples)
            model = build_model(cfg, T, M, D, Ctr.shape[1], adjacency, seed=seed)
        result = fit(model, splits["train"], splits["val"], stats, config, rng)
        history = result.history
        if name in RNN_MODELS:
            ckpt = baselines.recurrent_checkpoint(model, config, stats, fold_id, result.best_epoch)
        else:
            ckpt = model_checkpoint(model, cfg, stats, fold_id, result.best_epoch, result.rng_state,
                                    shared_graph(samples))
    ckpt.metadata["model_name"] = name
    return TrainedModel(name, fold_id, model, ckpt, stats, history, time.perf_counter() - started)


def model_latent(model):
    """Per-edge probabilities or one-hots the model generates with, or ``None``."""
    regime = getattr(model, "regime", None)
    if regime == "pg":
        return model.graph.latent().edge_values()
    if regime == "ig":
        return model.graph.latent(hard=True).edge_values()
    if regime in ("nri", "fnri"):
        return model.aggregate_posterior
    return None


# ------------------------------------------------------------------ report

@dataclass
class EvalReport:
    """Per-model test MSE across folds (std with ddof=0 over fold means)."""

    rows: list
    n_folds: int
    seed: int
    config: dict

    def row(self, name):
        for r in self.rows:
            if r["model"] == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "n_folds": self.n_folds, "seed": self.seed,
                "config": self.config, "rows": self.rows}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def write_csv(self, path):
        regimes = sorted({k for r in self.rows for k in r["per_regime_mse"]})
        fields = (["model", "mse_mean", "mse_std"] + [f"fold{k}_mse" for k in range(self.n_folds)]
                  + [f"regime{k}_mse" for k in regimes] + ["edge_recovery"])
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(fields)
            for r in self.rows:
                writer.writerow([r["model"], repr(r["mse_mean"]), repr(r["mse_std"])]
                                + [repr(v) for v in r["fold_mse"]]
                                + [repr(r["per_regime_mse"].get(k, float("nan"))) for k in regimes]
                                + ["" if r["edge_recovery"] is None else repr(r["edge_recovery"])])


def _summarise(name, per_fold):
    fold_mse = [f["mse"] for f in per_fold]
    regimes = sorted({k for f in per_fold for k in f["per_regime"]})
    per_regime = {k: float(np.mean([f["per_regime"][k] for f in per_fold if k in f["per_regime"]]))
                  for k in regimes}
    rec = [f["edge_recovery"] for f in per_fold if f["edge_recovery"] is not None]
    return {"model": name, "fold_mse": fold_mse, "mse_mean": float(np.mean(fold_mse)),
            "mse_std": float(np.std(fold_mse)), "per_regime_mse": per_regime,
            "fold_edge_recovery": rec, "edge_recovery": float(np.mean(rec)) if rec else None,
            "fold_regime_counts": [f["regime_counts"] for f in per_fold]}


def run_benchmark(samples, models, folds, config=None, seed=0, keep_models=False):
    """Train every requested model on every fold and score test generations.

    Returns ``(report, trained)``; ``trained`` lists :class:`TrainedModel`
    entries when ``keep_models`` is set and is empty otherwise.
    """
    names = parse_models(models)
    config = replace(config or TrainingConfig(), seed=seed)
    gt = shared_graph(samples)
    labels = np.array([s.regime_label for s in samples])
    per_model = {n: [] for n in names}
    trained = []
    for fold_id, fold in enumerate(folds):
        stats, splits = fold_arrays(samples, fold)
        Xte, Cte = splits["test"]
        test_labels = labels[fold.test]
        for name in names:
            tm = train_named_model(name, samples, fold, fold_id, config, splits, stats)
            gen = tm.model.generate(Xte[:, 0], Cte, Xte.shape[1])
            errs = per_sample_mse(gen, Xte, stats)
            latent = model_latent(tm.model)
            rec = edge_recovery(latent, gt) if latent is not None and gt is not None else None
            per_model[name].append({
                "mse": float(errs.mean()),
                "per_regime": {int(r): float(errs[test_labels == r].mean()) for r in np.unique(test_labels)},
                "regime_counts": {int(r): int((test_labels == r).sum()) for r in np.unique(test_labels)},
                "edge_recovery": rec,
            })
            log.info("fold %d %s mse %.4g (%.0fs)", fold_id, name, errs.mean(), tm.seconds)
            if keep_models:
                trained.append(tm)
    rows = [_summarise(n, per_model[n]) for n in names]
    return EvalReport(rows, len(folds), seed, config.to_dict()), trained


# -------------------------------------------------------------- generation

def model_from_any_checkpoint(ckpt):
    """``(model, stats)`` for a checkpoint of any kind."""
    stats = None if ckpt.stats is None else NormalizationStats.from_dict(ckpt.stats)
    if ckpt.kind == "cnri":
        model, _, stats = model_from_checkpoint(ckpt)
    elif ckpt.kind == "rnn":
        model = baselines.recurrent_from_checkpoint(ckpt)
    elif ckpt.kind == "mean":
        model = baselines.mean_from_checkpoint(ckpt)
    else:
        raise ValidationError(f"unknown checkpoint kind {ckpt.kind!r}")
    if stats is None:
        raise MissingArtifactError("checkpoint carries no normalisation statistics")
    return model, stats


def conditional_generate(checkpoint, c, x1, n_frames, rng=None, sample=False, aggregate=None):
    """Generate a trajectory (T, M, D) in data units from ``c`` and the seed frame ``x1``.

    Output is expressed in the frame of ``x1``'s reference body at time 1, so
    the first row equals ``x1``.  ``aggregate`` overrides the stored aggregate
    posterior of NRI/fNRI checkpoints.
    """
    model, stats = model_from_any_checkpoint(checkpoint)
    if aggregate is not None:
        model.set_aggregate_posterior(aggregate)
    x1 = np.asarray(x1, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x1.ndim != 2:
        raise ValidationError(f"seed frame must be (M, D), got shape {x1.shape}")
    z1 = normalize(x1[None, None], stats)[0, 0]
    kwargs = {"rng": rng}
    if getattr(model, "variational", False):
        kwargs["sample"] = sample
    gen = model.generate(z1[None], c[None], n_frames, **kwargs)[0]
    out = denormalize(gen, stats)
    ref = stats.reference_body
    out[..., :2] += x1[ref, :2]
    out[0] = x1
    return out


# ------------------------------------------------------- interaction maps

def _edge_probability_matrix(latent, n_bodies):
    """(M, M) matrix of edge (non-zero type) probability with a zero diagonal."""
    arr = np.asarray(latent, dtype=np.float64)
    if arr.ndim == 3:  # fNRI: any head switched on
        on = 1.0 - np.prod(arr[..., 0], axis=-1)
    else:
        on = 1.0 - arr[..., 0]
    return edges_to_matrix(on[:, None], n_bodies)[..., 0]


def _write_matrix(path, matrix):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
        csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in matrix])


def read_matrix(path):
    rows = [line for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def export_interaction_maps(trained, samples, path):
    """Write M x M CSV maps for each trained graph model.

    ``<model>_fold<k>.csv`` holds the edge probability used for generation
    (0/1 for fixed and learned graphs).  For NRI/fNRI models the per-system
    posterior maps, averaged over each system's trajectories, are written to
    ``per_system/<model>_fold<k>/regime_<label>/system_<id>.csv``.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for tm in trained:
        latent = model_latent(tm.model)
        if latent is None:
            continue
        M = tm.model.n_bodies
        target = root / f"{tm.name}_fold{tm.fold}.csv"
        _write_matrix(target, _edge_probability_matrix(latent, M))
        written.append(target)
        if not getattr(tm.model, "variational", False):
            continue
        X = normalize(np.stack([s.trajectory for s in samples]), tm.stats)
        post = per_sample_posteriors(tm.model, X)
        groups = np.array([s.group_id for s in samples])
        for gid in np.unique(groups):
            members = np.flatnonzero(groups == gid)
            label = samples[members[0]].regime_label
            target = root / "per_system" / f"{tm.name}_fold{tm.fold}" / f"regime_{label}" / f"system_{gid}.csv"
            _write_matrix(target, _edge_probability_matrix(post[members].mean(axis=0), M))
            written.append(target)
    return written


def edge_type_matrix(latent, n_bodies):
    """Argmax edge type as an (M, M) integer matrix with a zero diagonal."""
    types, _ = edge_types_from(latent)
    return edges_to_matrix(types[:, None].astype(np.float64), n_bodies)[..., 0].astype(int)


__all__ = ["EvalReport", "MODEL_NAMES", "TrainedModel", "conditional_generate", "export_interaction_maps",
           "model_from_any_checkpoint", "parse_models", "run_benchmark", "train_named_model"]
