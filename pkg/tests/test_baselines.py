import numpy as np
import pytest

from cnri.baselines import (
    CELL_TYPES, RecurrentBaseline, build_recurrent, fit_mean, mean_checkpoint, mean_from_checkpoint,
    nri_unconditional, predict_mean, recurrent_checkpoint, recurrent_from_checkpoint, regime_from_condition,
)
from cnri.data import DatasetConfig, generate_dataset, grouped_kfold, shared_graph
from cnri.errors import DimensionError, ValidationError
from cnri.evaluation import mse_denormalized
from cnri.model import CNRIModel
from cnri.training.checkpoint import load_checkpoint, save_checkpoint
from cnri.training.trainer import TrainingConfig, build_model, fit, fold_arrays

RNG = np.random.default_rng


def _cond(label, M=2):
    c = np.zeros(1 + M + 2 + M * (M - 1) // 2)
    c[1 + M + label] = 1.0
    return c


# -------------------------------------------------------------------- means

def test_single_trajectory_mean_is_itself():
    X = RNG(0).normal(size=(1, 5, 2, 4))
    np.testing.assert_array_equal(fit_mean(X).global_mean, X[0])


def test_symmetric_pair_has_zero_mean():
    x = RNG(1).normal(size=(5, 2, 4))
    np.testing.assert_array_equal(fit_mean(np.stack([x, -x])).global_mean, 0.0)


def test_per_regime_stores_each_mean():
    a = np.full((2, 4, 2, 4), 1.0)
    b = np.full((2, 4, 2, 4), 3.0)
    X = np.concatenate([a, b])
    labels = np.array([0, 0, 1, 1])
    per = fit_mean(X, labels, "per_regime")
    np.testing.assert_array_equal(per.regime_means[0], 1.0)
    np.testing.assert_array_equal(per.regime_means[1], 3.0)
    np.testing.assert_array_equal(fit_mean(X, labels).global_mean, 2.0)


def test_missing_regime_is_an_error():
    with pytest.raises(ValidationError):
        fit_mean(np.zeros((2, 3, 2, 4)), np.array([0, 0]), "per_regime")
    with pytest.raises(ValidationError):
        fit_mean(np.zeros((0, 3, 2, 4)))


def test_slide_contract():
    X = RNG(2).normal(size=(6, 5, 2, 4))
    model = fit_mean(X)
    x1 = RNG(3).normal(size=(2, 4))
    pred = predict_mean(model, x1)
    np.testing.assert_allclose(pred[0, :, :2], x1[:, :2], atol=1e-15)
    np.testing.assert_array_equal(pred[:, :, 2:], model.global_mean[:, :, 2:])


def test_mean_against_itself_after_slide_is_zero():
    X = RNG(4).normal(size=(6, 5, 2, 4))
    model = fit_mean(X)
    m = model.global_mean
    pred = predict_mean(model, m[0])
    np.testing.assert_array_equal(pred, m)


def test_translation_invariance():
    model = fit_mean(RNG(5).normal(size=(4, 5, 2, 4)))
    x1 = RNG(6).normal(size=(2, 4))
    delta = np.array([0.7, -1.3])
    shifted = x1.copy()
    shifted[:, :2] += delta
    a, b = predict_mean(model, x1), predict_mean(model, shifted)
    np.testing.assert_allclose(b[..., :2] - a[..., :2], np.broadcast_to(delta, a[..., :2].shape), atol=1e-12)
    np.testing.assert_array_equal(b[..., 2:], a[..., 2:])


def test_unknown_regime_falls_back_with_warning():
    X = RNG(7).normal(size=(4, 5, 2, 4))
    model = fit_mean(X, np.array([0, 1, 0, 1]), "per_regime")
    with pytest.warns(UserWarning, match="regime"):
        pred = predict_mean(model, X[0, 0], regimes=5)
    np.testing.assert_allclose(pred[0, :, :2], X[0, 0, :, :2])
    np.testing.assert_array_equal(pred[:, :, 2:], model.global_mean[:, :, 2:])


def test_improved_mean_reads_regime_from_condition():
    X = np.concatenate([np.full((2, 4, 2, 4), 1.0), np.full((2, 4, 2, 4), 3.0)])
    model = fit_mean(X, np.array([0, 0, 1, 1]), "per_regime")
    C = np.stack([_cond(0), _cond(1)])
    out = model.generate(X[:2, 0], C)
    assert np.all(out[0, :, :, 2:] == 1.0) and np.all(out[1, :, :, 2:] == 3.0)
    np.testing.assert_array_equal(regime_from_condition(C, 2), [0, 1])


def test_improved_mean_not_worse_than_global_on_train():
    samples = generate_dataset(12, (2, 4), DatasetConfig(n_bodies=3, n_frames=10, sample_every=20), seed=2)
    X = np.stack([s.trajectory for s in samples])
    labels = np.array([s.regime_label for s in samples])
    C = np.stack([s.condition for s in samples])
    glob = fit_mean(X, labels, "global")
    per = fit_mean(X, labels, "per_regime")
    err = {m.variant: np.mean((m.global_mean - X) ** 2) if m.variant == "global"
           else np.mean((np.stack([m.regime_means[l] for l in labels]) - X) ** 2) for m in (glob, per)}
    assert err["per_regime"] <= err["global"]
    assert per.generate(X[:, 0], C).shape == X.shape


def test_mean_checkpoint_round_trip(tmp_path):
    X = RNG(8).normal(size=(4, 5, 2, 4))
    model = fit_mean(X, np.array([0, 1, 1, 0]), "per_regime")
    save_checkpoint(tmp_path / "m.ckpt", mean_checkpoint(model))
    back = mean_from_checkpoint(load_checkpoint(tmp_path / "m.ckpt", expected_kind="mean"))
    assert back.variant == "per_regime"
    for k in (0, 1):
        np.testing.assert_array_equal(back.regime_means[k], model.regime_means[k])


# ---------------------------------------------------------------- recurrent

@pytest.fixture(scope="module")
def corpus():
    samples = generate_dataset(8, (2, 3), DatasetConfig(n_bodies=3, n_frames=10, sample_every=20), seed=3)
    fold = grouped_kfold(samples, 3, seed=0)[0]
    stats, splits = fold_arrays(samples, fold)
    return samples, stats, splits


@pytest.mark.parametrize("cell", CELL_TYPES)
def test_recurrent_io_contract(cell):
    model = RecurrentBaseline(cell, 6, 3, 4, 9, 8, RNG(0))
    out = model.generate(RNG(1).normal(size=(2, 3, 4)), RNG(2).normal(size=(2, 9)))
    assert out.shape == (2, 6, 3, 4)
    with pytest.raises(DimensionError):
        model.generate(np.zeros((2, 3, 4)), np.zeros((3, 9)))


@pytest.mark.parametrize("cell", CELL_TYPES)
@pytest.mark.parametrize("per_step", [False, True])
def test_recurrent_is_closed_loop(cell, per_step):
    model = RecurrentBaseline(cell, 6, 3, 4, 9, 8, RNG(0), per_step_condition=per_step)
    X = RNG(3).normal(size=(2, 6, 3, 4))
    C = RNG(4).normal(size=(2, 9))
    Y = X.copy()
    Y[:, 1:] = 1e3
    np.testing.assert_array_equal(model.generate(X[:, 0], C), model.generate(Y[:, 0], C))
    # the condition reaches the output through the initial state
    assert not np.array_equal(model.generate(X[:, 0], C), model.generate(X[:, 0], C + 1.0))


@pytest.mark.parametrize("cell", CELL_TYPES)
def test_recurrent_training_beats_untrained(cell, corpus):
    samples, stats, splits = corpus
    Xtr, Ctr = splits["train"]
    cfg = TrainingConfig(regime="pg", epochs=30, decoder_hidden=16, lr=5e-3)
    model = build_recurrent(cell, cfg, 10, 3, 4, Ctr.shape[1])
    before = mse_denormalized(model.generate(Xtr[:, 0], Ctr), Xtr, stats)
    fit(model, splits["train"], splits["val"], stats, cfg)
    after = mse_denormalized(model.generate(Xtr[:, 0], Ctr), Xtr, stats)
    assert after < before


def test_recurrent_checkpoint_round_trip(tmp_path, corpus):
    _, stats, splits = corpus
    cfg = TrainingConfig(regime="pg", epochs=1, decoder_hidden=8)
    model = build_recurrent("lstm", cfg, 10, 3, 4, splits["train"][1].shape[1], per_step_condition=True)
    save_checkpoint(tmp_path / "r.ckpt", recurrent_checkpoint(model, cfg, stats))
    back = recurrent_from_checkpoint(load_checkpoint(tmp_path / "r.ckpt", expected_kind="rnn"))
    Xte, Cte = splits["test"]
    np.testing.assert_array_equal(back.generate(Xte[:, 0], Cte), model.generate(Xte[:, 0], Cte))


def test_unknown_cell_rejected():
    with pytest.raises(ValidationError):
        RecurrentBaseline("transformer", 5, 2, 4, 3, 4, RNG(0))


# ---------------------------------------------------------- unconditional NRI

def test_unconditional_nri_ignores_condition():
    cfg = nri_unconditional(TrainingConfig(encoder_hidden=6, decoder_hidden=6))
    assert cfg.regime == "nri" and not cfg.use_condition
    model = build_model(cfg, 6, 3, 4, 9)
    model.set_aggregate_posterior(np.tile([0.3, 0.7], (6, 1)))
    x1 = RNG(5).normal(size=(2, 3, 4))
    a = model.generate(x1, RNG(6).normal(size=(2, 9)))
    b = model.generate(x1, RNG(7).normal(size=(2, 9)))
    np.testing.assert_array_equal(a, b)
    assert not any(k.startswith("decoder.f_c_") for k in model.named_parameters())


def test_unconditional_matches_conditional_with_zeroed_pathways():
    kw = dict(encoder_hidden=6, decoder_hidden=6, dropout=0.0, seed=4)
    cond = CNRIModel("nri", 6, 3, 4, 9, **kw)
    uncond = CNRIModel("nri", 6, 3, 4, 9, use_condition=False, **kw)
    shared = {k: v for k, v in cond.state_dict().items() if not k.startswith("decoder.f_c_")}
    uncond.load_state_dict(shared)
    for name in ("f_c_hid", "f_c_msgs"):
        mlp = getattr(cond.decoder, name)
        for lin in (mlp.fc1, mlp.fc2):
            lin.weight.data = np.zeros_like(lin.weight.data)
            lin.bias.data = np.zeros_like(lin.bias.data)
    agg = np.tile([0.4, 0.6], (6, 1))
    cond.set_aggregate_posterior(agg)
    uncond.set_aggregate_posterior(agg)
    x1, C = RNG(8).normal(size=(2, 3, 4)), RNG(9).normal(size=(2, 9))
    np.testing.assert_allclose(cond.generate(x1, C), uncond.generate(x1, C), atol=1e-12)


def test_unconditional_trains_on_shared_graph(corpus):
    samples, stats, splits = corpus
    cfg = nri_unconditional(TrainingConfig(epochs=2, encoder_hidden=6, decoder_hidden=6))
    model = build_model(cfg, 10, 3, 4, splits["train"][1].shape[1], shared_graph(samples))
    fit(model, splits["train"], splits["val"], stats, cfg)
    assert model.aggregate_posterior is not None
