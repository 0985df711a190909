"""Comparison models: slid mean trajectories, conditional recurrent generators
and the unconditional NRI reformulation.

Every model here generates from ``(x1, C)`` only, through the same
``generate(x1, C, n_frames, rng=None)`` method the cNRI model exposes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from cnri.data.dataset import N_REGIMES
from cnri.errors import DimensionError, ValidationError
from cnri.model import LossParts
from cnri.numerics import ops
from cnri.numerics.layers import GRUCell, Linear, Module, parameter
from cnri.numerics.tensor import Tensor, no_grad
from cnri.training.checkpoint import Checkpoint

MEAN_VARIANTS = ("global", "per_regime")
CELL_TYPES = ("rnn", "gru", "lstm")


def regime_from_condition(C, n_bodies, n_regimes=N_REGIMES):
    """Regime labels encoded in the one-hot block of condition vectors (B, d)."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    block = C[:, 1 + n_bodies:1 + n_bodies + n_regimes]
    return block.argmax(axis=1)


# ------------------------------------------------------------------ means

@dataclass
class MeanModel:
    variant: str
    global_mean: np.ndarray
    regime_means: dict

    @property
    def n_frames(self):
        return self.global_mean.shape[0]

    @property
    def n_bodies(self):
        return self.global_mean.shape[1]

    def generate(self, x1, C, n_frames=None, rng=None):
        x1 = np.asarray(x1, dtype=np.float64)
        if x1.ndim == 2:
            x1 = x1[None]
        regimes = regime_from_condition(C, self.n_bodies) if self.variant == "per_regime" else None
        return predict_mean(self, x1, regimes, n_frames)


def fit_mean(X, regimes=None, variant="global"):
    """Mean trajectory of the training split (N, T, M, D), pooled or per regime label."""
    X = np.asarray(X, dtype=np.float64)
    if variant not in MEAN_VARIANTS:
        raise ValidationError(f"unknown mean variant {variant!r}; expected one of {MEAN_VARIANTS}")
    if X.ndim != 4 or len(X) == 0:
        raise ValidationError(f"need a non-empty (N, T, M, D) training array, got shape {X.shape}")
    per = {}
    if variant == "per_regime":
        if regimes is None:
            raise ValidationError("per-regime means need regime labels")
        regimes = np.asarray(regimes)
        missing = sorted(set(range(N_REGIMES)) - set(regimes.tolist()))
        if missing:
            raise ValidationError(f"regime(s) {missing} absent from the training split")
        per = {int(r): X[regimes == r].mean(axis=0) for r in np.unique(regimes)}
    return MeanModel(variant, X.mean(axis=0), per)


def predict_mean(model, x1, regimes=None, n_frames=None):
    """Mean trajectories slid so each body's frame-1 position equals ``x1``.

    Only the two position features move; velocities keep their mean values.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    single = x1.ndim == 2
    x1 = x1[None] if single else x1
    B = len(x1)
    if regimes is None or model.variant == "global":
        bases = np.repeat(model.global_mean[None], B, axis=0)
    else:
        regimes = np.broadcast_to(np.asarray(regimes), (B,))
        unknown = sorted({int(r) for r in regimes} - set(model.regime_means))
        if unknown:
            warnings.warn(f"no mean stored for regime(s) {unknown}; using the global mean", stacklevel=2)
        bases = np.stack([model.regime_means.get(int(r), model.global_mean) for r in regimes])
    if x1.shape[1:] != bases.shape[2:]:
        raise DimensionError(f"seed frame shape {x1.shape[1:]} != mean frame shape {bases.shape[2:]}")
    out = bases.copy()
    out[..., :2] += (x1[:, :, :2] - bases[:, 0, :, :2])[:, None]
    if n_frames is not None:
        out = out[:, :n_frames]
    return out[0] if single else out


def mean_checkpoint(model, stats=None, fold=None):
    tensors = {"global_mean": model.global_mean}
    tensors.update({f"regime_mean.{r}": m for r, m in model.regime_means.items()})
    return Checkpoint(kind="mean", config={"variant": model.variant, "regime": None}, tensors=tensors,
                      stats=None if stats is None else stats.to_dict(), fold=fold)


def mean_from_checkpoint(ckpt):
    per = {int(k.split(".")[1]): v for k, v in ckpt.tensors.items() if k.startswith("regime_mean.")}
    return MeanModel(ckpt.config["variant"], ckpt.tensors["global_mean"], per)


# -------------------------------------------------------------- recurrent

class _SimpleCell(Module):
    def __init__(self, n_in, n_hid, rng):
        self.inp = Linear(n_in, n_hid, rng, init="uniform")
        self.rec = Linear(n_hid, n_hid, rng, init="uniform")

    def __call__(self, x, state):
        return ops.tanh(ops.add(self.inp(x), self.rec(state)))


class _LSTMCell(Module):
    """Gate order (input, forget, cell, output); the state is the pair ``(h, c)``."""

    def __init__(self, n_in, n_hid, rng):
        self.n_hid = n_hid
        self.inp = Linear(n_in, 4 * n_hid, rng, init="uniform")
        self.rec = Linear(n_hid, 4 * n_hid, rng, init="uniform")

    def __call__(self, x, state):
        h, c = state
        z = ops.add(self.inp(x), self.rec(h))
        H = self.n_hid
        i, f, g, o = (ops.take(z, np.arange(k * H, (k + 1) * H), axis=-1) for k in range(4))
        c_next = ops.add(ops.mul(ops.sigmoid(f), c), ops.mul(ops.sigmoid(i), ops.tanh(g)))
        return ops.mul(ops.sigmoid(o), ops.tanh(c_next)), c_next


class RecurrentBaseline(Module):
    """Closed-loop generator on flattened frames with a condition-initialised state.

    The next frame is ``x_t + W h_t``.  With ``per_step_condition`` the
    condition vector is also appended to every input.
    """

    variational = False

    def __init__(self, cell, n_frames, n_bodies, n_features, cond_dim, hidden, rng,
                 per_step_condition=False):
        if cell not in CELL_TYPES:
            raise ValidationError(f"unknown cell type {cell!r}; expected one of {CELL_TYPES}")
        self.cell_type = cell
        self.n_frames, self.n_bodies, self.n_features, self.cond_dim = n_frames, n_bodies, n_features, cond_dim
        self.hidden = hidden
        self.per_step_condition = per_step_condition
        n_flat = n_bodies * n_features
        n_in = n_flat + (cond_dim if per_step_condition else 0)
        self.cell = {"rnn": _SimpleCell, "gru": GRUCell, "lstm": _LSTMCell}[cell](n_in, hidden, rng)
        self.init_state = Linear(cond_dim, hidden, rng, init="uniform")
        self.readout = Linear(hidden, n_flat, rng, init="uniform")
        self.readout.weight = parameter(self.readout.weight.data * 0.1)
        self.readout.bias = parameter(np.zeros(n_flat))

    def _step(self, x, state):
        h = self.cell(x, state)
        return (h, h[0]) if self.cell_type == "lstm" else (h, h)

    def rollout(self, x1, C, n_frames):
        x1 = np.asarray(x1.data if isinstance(x1, Tensor) else x1, dtype=np.float64)
        if x1.ndim == 2:
            x1 = x1[None]
        if x1.shape[1:] != (self.n_bodies, self.n_features):
            raise DimensionError(f"seed frame shape {x1.shape} != (B, {self.n_bodies}, {self.n_features})")
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        if C.shape != (len(x1), self.cond_dim):
            raise DimensionError(f"conditions {C.shape} do not match {len(x1)} seeds of dim {self.cond_dim}")
        if n_frames < 2:
            raise ValidationError(f"rollout needs at least 2 frames, got {n_frames}")
        B = len(x1)
        cond = Tensor(C)
        h0 = ops.tanh(self.init_state(cond))
        state = (h0, Tensor(np.zeros(h0.shape))) if self.cell_type == "lstm" else h0
        x = Tensor(x1.reshape(B, -1))
        frames = [x]
        for _ in range(1, n_frames):
            inp = ops.concat([x, cond], axis=-1) if self.per_step_condition else x
            state, h = self._step(inp, state)
            x = ops.add(x, self.readout(h))
            frames.append(x)
        return ops.reshape(ops.stack(frames, axis=1), (B, n_frames, self.n_bodies, self.n_features))

    def loss_terms(self, X, C, rng=None, noise=None):
        """Mean squared error of the closed-loop rollout over frames 2..T."""
        X = np.asarray(X, dtype=np.float64)
        means = self.rollout(X[:, 0], C, X.shape[1])
        resid = ops.sub(ops.take(means, np.arange(1, X.shape[1]), axis=1), Tensor(X[:, 1:]))
        mse = ops.mean(ops.square(resid))
        return LossParts(mse, mse, None, means)

    def generate(self, x1, C, n_frames=None, rng=None):
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = self.rollout(x1, C, n_frames or self.n_frames)
        finally:
            self.train(was_training)
        return out.data.copy()

    def config_dict(self):
        return {"cell": self.cell_type, "n_frames": self.n_frames, "n_bodies": self.n_bodies,
                "n_features": self.n_features, "cond_dim": self.cond_dim, "hidden": self.hidden,
                "per_step_condition": self.per_step_condition}


def build_recurrent(cell, config, n_frames, n_bodies, n_features, cond_dim, seed=None,
                    per_step_condition=False):
    """Recurrent baseline sized like the cNRI decoder of ``config``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return RecurrentBaseline(cell, n_frames, n_bodies, n_features, cond_dim, config.decoder_hidden, rng,
                             per_step_condition)


def recurrent_checkpoint(model, config, stats, fold=None, epoch=None):
    cfg = {"training": config.to_dict(), "model": model.config_dict(), "regime": None}
    return Checkpoint(kind="rnn", config=cfg, tensors=dict(model.state_dict()),
                      stats=None if stats is None else stats.to_dict(), fold=fold, epoch=epoch)


def recurrent_from_checkpoint(ckpt):
    m = dict(ckpt.config["model"])
    model = RecurrentBaseline(m.pop("cell"), rng=np.random.default_rng(0), **m)
    model.load_state_dict(ckpt.tensors)
    model.eval()
    return model


def nri_unconditional(config):
    """Training config for NRI without condition pathways (shared decoder code)."""
    from dataclasses import replace
    return replace(config, regime="nri", use_condition=False)
