"""Optimisation loop, cross-validated training and checkpoint conversion."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from cnri.data.dataset import shared_graph, stack_samples
from cnri.data.normalize import NormalizationStats, compute_stats, normalize
from cnri.errors import TrainingFault, ValidationError
from cnri.evaluation.metrics import mse_denormalized
from cnri.evaluation.posterior import aggregate_posterior
from cnri.model import REGIMES, CNRIModel
from cnri.numerics.optim import AdamState, adam_step, step_decay_lr
from cnri.numerics.tensor import no_grad
from cnri.training.checkpoint import Checkpoint

log = logging.getLogger(__name__)

HIDDEN_PRESETS = {"default": (128, 256), "large": (256, 384), "small": (64, 128)}


@dataclass
class TrainingConfig:
    regime: str = "nri"
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    dropout: float = 0.1
    temperature: float = 0.5
    sigma2: float = 5e-5
    n_edge_types: int = 2
    encoder_hidden: int = 128
    decoder_hidden: int = 256
    edge_prior: tuple = (0.91, 0.09)
    use_condition: bool = True
    use_virtual_edge: bool = True
    stochastic_feed: bool = False
    val_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValidationError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        for name in ("epochs", "batch_size", "lr", "lr_decay", "lr_decay_every", "temperature",
                     "sigma2", "encoder_hidden", "decoder_hidden", "val_every"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_edge_types < 2 and self.regime != "fnri":
            raise ValidationError("categorical regimes need at least two edge types")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")
        self.edge_prior = tuple(float(p) for p in self.edge_prior)

    def to_dict(self):
        d = asdict(self)
        d["edge_prior"] = list(self.edge_prior)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def with_preset(self, name):
        enc, dec = HIDDEN_PRESETS[name]
        return replace(self, encoder_hidden=enc, decoder_hidden=dec)


def learning_rate(epoch, config):
    return step_decay_lr(epoch, config.lr, config.lr_decay, config.lr_decay_every)


def build_model(config, n_frames, n_bodies, n_features, cond_dim, adjacency=None, seed=None):
    prior = config.edge_prior
    if config.regime != "fnri" and len(prior) != config.n_edge_types:
        raise ValidationError(f"edge prior {prior} does not have {config.n_edge_types} entries")
    return CNRIModel(
        config.regime, n_frames, n_bodies, n_features, cond_dim, adjacency,
        n_edge_types=config.n_edge_types, encoder_hidden=config.encoder_hidden,
        decoder_hidden=config.decoder_hidden, dropout=config.dropout,
        temperature=config.temperature, sigma2=config.sigma2, edge_prior=prior,
        use_condition=config.use_condition, use_virtual_edge=config.use_virtual_edge,
        stochastic_feed=config.stochastic_feed, seed=config.seed if seed is None else seed)


@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_val_mse: float
    best_state: dict
    best_aggregate: np.ndarray | None = None
    rng_state: dict | None = None


def _snapshot(model):
    return {k: np.array(v, copy=True) for k, v in model.state_dict().items()}


def refresh_generation_state(model, X_train):
    """Recompute whatever generation needs from the training split (aggregate posterior)."""
    if getattr(model, "variational", False):
        model.set_aggregate_posterior(aggregate_posterior(model, X_train))


def fit(model, train, val, stats, config, rng=None):
    """Adam with step decay; keeps the state with the lowest validation MSE.

    ``train`` and ``val`` are ``(X, C)`` pairs of normalised arrays.  The best
    state is loaded back into ``model`` before returning.
    """
    X, C = train
    Xv, Cv = val
    if len(X) == 0 or len(Xv) == 0:
        raise ValidationError("training and validation splits must be non-empty")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params = model.named_parameters()
    opt = AdamState(lr=config.lr)
    history = []
    best = (np.inf, -1, None, None)
    for epoch in range(config.epochs):
        opt.lr = learning_rate(epoch, config)
        model.train()
        order = rng.permutation(len(X))
        losses = []
        for b, start in enumerate(range(0, len(X), config.batch_size)):
            idx = order[start:start + config.batch_size]
            model.zero_grad()
            parts = model.loss_terms(X[idx], C[idx], rng)
            value = parts.total.item()
            if not np.isfinite(value):
                raise TrainingFault(f"non-finite loss at epoch {epoch}, batch {b}")
            parts.total.backward()
            adam_step(params, opt)
            losses.append(value)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": float("nan"),
               "val_mse": float("nan"), "lr": opt.lr}
        if (epoch + 1) % config.val_every == 0 or epoch == config.epochs - 1:
            refresh_generation_state(model, X)
            model.eval()
            with no_grad():
                row["val_loss"] = model.loss_terms(Xv, Cv, np.random.default_rng(config.seed)).total.item()
            gen = model.generate(Xv[:, 0], Cv, Xv.shape[1])
            row["val_mse"] = mse_denormalized(gen, Xv, stats)
            if row["val_mse"] < best[0]:
                agg = getattr(model, "aggregate_posterior", None)
                best = (row["val_mse"], epoch, _snapshot(model), None if agg is None else agg.copy())
            log.info("epoch %d loss %.4g val_mse %.4g lr %.2g", epoch, row["train_loss"], row["val_mse"], opt.lr)
        history.append(row)
    if best[2] is None:
        raise TrainingFault("no finite validation score was recorded")
    model.load_state_dict(best[2])
    if hasattr(model, "set_aggregate_posterior"):
        model.set_aggregate_posterior(best[3])
    model.eval()
    return FitResult(history, best[1], best[0], best[2], best[3], rng.bit_generator.state)


# ------------------------------------------------------------- checkpoints

def model_checkpoint(model, config, stats, fold=None, epoch=None, rng_state=None, adjacency=None):
    tensors = dict(model.state_dict())
    if adjacency is not None:
        tensors["meta.adjacency"] = np.asarray(adjacency, dtype=np.float64)
    agg = getattr(model, "aggregate_posterior", None)
    if agg is not None:
        tensors["meta.aggregate_posterior"] = agg
    cfg = config.to_dict()
    cfg.update(n_frames=model.n_frames, n_bodies=model.n_bodies, n_features=model.n_features,
               cond_dim=model.cond_dim)
    return Checkpoint(kind="cnri", config=cfg, tensors=tensors,
                      stats=None if stats is None else stats.to_dict(), fold=fold, epoch=epoch,
                      rng_state=_jsonable(rng_state))


def model_from_checkpoint(ckpt):
    cfg = dict(ckpt.config)
    dims = {k: cfg.pop(k) for k in ("n_frames", "n_bodies", "n_features", "cond_dim")}
    config = TrainingConfig.from_dict(cfg)
    tensors = dict(ckpt.tensors)
    adjacency = tensors.pop("meta.adjacency", None)
    agg = tensors.pop("meta.aggregate_posterior", None)
    model = build_model(config, adjacency=adjacency, **dims)
    model.load_state_dict(tensors)
    model.set_aggregate_posterior(agg)
    model.eval()
    stats = None if ckpt.stats is None else NormalizationStats.from_dict(ckpt.stats)
    return model, config, stats


def _jsonable(state):
    if state is None:
        return None
    return {k: (_jsonable(v) if isinstance(v, dict) else int(v) if isinstance(v, np.integer) else v)
            for k, v in state.items()}


# ------------------------------------------------------- cross validation

@dataclass
class FoldRun:
    fold: int
    checkpoint: Checkpoint
    history: list
    model: object
    stats: NormalizationStats
    best_epoch: int
    extras: dict = field(default_factory=dict)


def fold_arrays(samples, fold, stats=None):
    """Normalised ``(X, C)`` arrays for the three splits of one fold."""
    X, C = stack_samples(samples)
    stats = stats or compute_stats(X[fold.train])
    Xn = normalize(X, stats)
    return stats, {split: (Xn[getattr(fold, split)], C[getattr(fold, split)])
                   for split in ("train", "val", "test")}


def fold_seed(seed, fold_id, stream):
    return np.random.default_rng(np.random.SeedSequence([seed, fold_id, stream]))


def train_fold(samples, fold, fold_id, config):
    stats, splits = fold_arrays(samples, fold)
    X = splits["train"][0]
    adjacency = shared_graph(samples)
    if config.regime in ("pg", "ig") and adjacency is None:
        raise ValidationError(f"regime {config.regime!r} needs a graph shared by every system")
    model = build_model(config, X.shape[1], X.shape[2], X.shape[3], splits["train"][1].shape[1],
                        adjacency, seed=int(fold_seed(config.seed, fold_id, 0).integers(2 ** 31)))
    result = fit(model, splits["train"], splits["val"], stats, config, fold_seed(config.seed, fold_id, 1))
    ckpt = model_checkpoint(model, config, stats, fold_id, result.best_epoch, result.rng_state, adjacency)
    return FoldRun(fold_id, ckpt, result.history, model, stats, result.best_epoch)


def train(samples, folds, config):
    """Train one model per fold; returns a list of :class:`FoldRun`."""
    return [train_fold(samples, fold, i, config) for i, fold in enumerate(folds)]


def write_history_csv(path, history):
    import csv
    with open(path, "w", newline="") as fh:
        fh.write("# schema-version: 1\n")
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "val_mse", "lr"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in writer.fieldnames})
