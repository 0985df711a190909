import math

import numpy as np
import pytest

from cnri.data import (
    DatasetConfig, SystemSpec, build_condition_vector, check_no_leakage, compute_stats,
    decode_condition_vector, denormalize, export_dataset_json, generate_dataset, grouped_kfold,
    normalize, read_dataset, regime_balance, simulate_spring_system, stack_samples, total_energy,
    write_dataset,
)
from cnri.data.dataset import random_graph
from cnri.errors import FormatError, IntegrityError, SimulationFault, ValidationError, VersionError

TWO_BODY = np.array([[0.0, 1.0], [1.0, 0.0]])


def measured_period(separation, frame_dt):
    """Mean spacing of sign changes (linearly interpolated), doubled."""
    s = separation
    idx = np.flatnonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)
    crossings = (idx + s[idx] / (s[idx] - s[idx + 1])) * frame_dt
    return 2.0 * np.mean(np.diff(crossings))


def analytic_period(stiffness, masses, k=1.0):
    return 2 * math.pi / math.sqrt(k * stiffness * (1 / masses[0] + 1 / masses[1]))


# --------------------------------------------------------------- simulator

def test_no_springs_no_motion():
    spec = SystemSpec(np.zeros((3, 3)), 1.0, np.ones(3))
    x0 = np.concatenate([np.random.default_rng(0).normal(size=(3, 2)), np.zeros((3, 2))], axis=1)
    traj = simulate_spring_system(spec, 20, 1e-2, x0, sample_every=3)
    np.testing.assert_array_equal(traj, np.repeat(x0[None], 20, axis=0))


@pytest.mark.parametrize("stiffness", [0.5, 1.0, 2.0, 4.0])
def test_two_body_period_matches_harmonic_oscillator(stiffness):
    masses = np.array([1.0, 1.5])
    spec = SystemSpec(TWO_BODY, stiffness, masses)
    x0 = np.array([[0.5, 0.0, 0.0, 0.0], [-0.5, 0.0, 0.0, 0.0]])
    traj = simulate_spring_system(spec, 2000, 1e-3, x0, sample_every=10)
    sep = traj[:, 0, 0] - traj[:, 1, 0]
    period = measured_period(sep, 1e-2)
    assert abs(period - analytic_period(stiffness, masses)) / analytic_period(stiffness, masses) < 0.02


def test_period_scales_inverse_sqrt_stiffness():
    masses = np.ones(2)
    x0 = np.array([[0.5, 0.0, 0.0, 0.0], [-0.5, 0.0, 0.0, 0.0]])
    periods = []
    for s in (1.0, 4.0):
        traj = simulate_spring_system(SystemSpec(TWO_BODY, s, masses), 2000, 1e-3, x0, sample_every=10)
        periods.append(measured_period(traj[:, 0, 0] - traj[:, 1, 0], 1e-2))
    assert periods[0] / periods[1] == pytest.approx(2.0, rel=0.02)


def test_energy_drift_under_one_percent():
    rng = np.random.default_rng(2)
    spec = SystemSpec(random_graph(5, 0.5, rng), 1.3, rng.uniform(0.5, 1.5, 5))
    traj = simulate_spring_system(spec, 500, 1e-3, rng=rng)
    e = np.array([total_energy(f, spec) for f in traj])
    assert np.max(np.abs(e - e[0])) / abs(e[0]) <= 0.01


def test_stiffness_changes_trajectory_and_divergence_grows():
    rng = np.random.default_rng(4)
    adj = random_graph(4, 0.6, rng)
    masses = np.ones(4)
    x0 = np.concatenate([rng.normal(size=(4, 2)), np.zeros((4, 2))], axis=1)
    a = simulate_spring_system(SystemSpec(adj, 1.0, masses), 60, 1e-3, x0, sample_every=20)
    b = simulate_spring_system(SystemSpec(adj, 2.0, masses), 60, 1e-3, x0, sample_every=20)
    diff = np.abs(a - b).sum(axis=(1, 2))
    assert diff[0] == 0.0
    assert np.mean((a - b) ** 2) > 0
    assert diff[5] > diff[1] > 0


def test_simulation_fault_reports_step():
    spec = SystemSpec(TWO_BODY, 1.0, np.ones(2))
    x0 = np.array([[1e308, 0, 1e308, 0], [-1e308, 0, 0, 0]])
    with pytest.raises(SimulationFault) as exc:
        simulate_spring_system(spec, 5, 1.0, x0)
    assert exc.value.step is not None


def test_simulation_preconditions():
    spec = SystemSpec(TWO_BODY, 1.0, np.ones(2))
    with pytest.raises(ValidationError):
        simulate_spring_system(spec, 1, 1e-3, np.zeros((2, 4)))
    with pytest.raises(ValidationError):
        simulate_spring_system(spec, 5, 0.0, np.zeros((2, 4)))
    with pytest.raises(ValidationError):
        SystemSpec(np.array([[0, 1], [0, 0]]), 1.0, np.ones(2))
    with pytest.raises(ValidationError):
        SystemSpec(TWO_BODY, -1.0, np.ones(2))


# --------------------------------------------------------- condition vector

def test_condition_vector_layout():
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
    spec = SystemSpec(adj, 1.5, np.array([1.0, 2.0, 3.0]), 1)
    c = build_condition_vector(spec)
    np.testing.assert_array_equal(c, [1.5, 1, 2, 3, 0, 1, 1, 0, 1])
    np.testing.assert_array_equal(build_condition_vector(spec), c)
    assert np.all(build_condition_vector(spec, include_adjacency=False)[-3:] == 0)


def test_condition_vector_round_trip_is_injective():
    rng = np.random.default_rng(7)
    seen = {}
    for _ in range(50):
        M = 4
        spec = SystemSpec(random_graph(M, 0.5, rng), rng.uniform(0.5, 2), rng.uniform(0.5, 1.5, M),
                          int(rng.integers(2)))
        c = build_condition_vector(spec)
        back = decode_condition_vector(c, M)
        assert back.stiffness_scale == spec.stiffness_scale
        np.testing.assert_array_equal(back.masses, spec.masses)
        np.testing.assert_array_equal(back.adjacency, spec.adjacency)
        assert back.regime_label == spec.regime_label
        seen[c.tobytes()] = spec
    assert len(seen) == 50


# ---------------------------------------------------------------- datasets

SMALL = DatasetConfig(n_bodies=3, n_frames=12, sample_every=5)


def test_one_cycle_per_system():
    samples = generate_dataset(5, (1, 1), SMALL, seed=1)
    assert len(samples) == 5
    assert sorted({s.group_id for s in samples}) == [0, 1, 2, 3, 4]


def test_generation_is_deterministic():
    a = generate_dataset(4, (1, 3), SMALL, seed=9)
    b = generate_dataset(4, (1, 3), SMALL, seed=9)
    assert len(a) == len(b) and all(x == y for x, y in zip(a, b))


def test_group_shares_condition_and_regime():
    samples = generate_dataset(6, (2, 4), SMALL, seed=2)
    by_group = {}
    for s in samples:
        c, r = by_group.setdefault(s.group_id, (s.condition, s.regime_label))
        np.testing.assert_array_equal(c, s.condition)
        assert r == s.regime_label
        assert np.all(np.isfinite(s.trajectory))


def test_sample_count_oracle():
    # cycles ~ Uniform{3..8}: 60 systems give between 180 and 480 samples, mean 5.5 * 60
    cfg = DatasetConfig(n_bodies=2, n_frames=2, sample_every=1)
    totals = [len(generate_dataset(60, (3, 8), cfg, seed=s)) for s in range(40)]
    assert all(180 <= t <= 480 for t in totals)
    assert abs(np.mean(totals) - 330) < 3 * np.sqrt(60 * 35 / 12) / np.sqrt(40) + 1


def test_invalid_generation_arguments():
    with pytest.raises(ValidationError):
        generate_dataset(2, (1, 1), SMALL)
    with pytest.raises(ValidationError):
        generate_dataset(5, (3, 2), SMALL)


def test_regime_label_splits_at_median_stiffness():
    samples = generate_dataset(10, (1, 1), SMALL, seed=3)
    stiff = np.array([s.condition[0] for s in samples])
    labels = np.array([s.regime_label for s in samples])
    assert np.all(labels == (stiff > np.median(stiff)))


# ----------------------------------------------------------- normalisation

@pytest.fixture(scope="module")
def corpus():
    return generate_dataset(8, (2, 3), DatasetConfig(n_bodies=4, n_frames=15, sample_every=10), seed=5)


def test_normalize_round_trip(corpus):
    X, _ = stack_samples(corpus)
    stats = compute_stats(X)
    Z = normalize(X, stats)
    centred = X.copy()
    centred[..., :2] -= X[..., :1, :2]
    np.testing.assert_allclose(denormalize(Z, stats), centred, atol=1e-10)
    np.testing.assert_allclose(denormalize(normalize(centred, stats), stats), centred, atol=1e-10)


def test_normalized_train_split_is_standardised(corpus):
    X, _ = stack_samples(corpus)
    Z = normalize(X, compute_stats(X))
    pos = Z[..., 1:, :2].reshape(-1, 2)
    vel = Z[..., 2:].reshape(-1, 2)
    for block in (pos, vel):
        np.testing.assert_allclose(block.mean(axis=0), 0.0, atol=1e-8)
        np.testing.assert_allclose(block.std(axis=0), 1.0, atol=1e-8)
    assert np.all(Z[..., 0, :2] == 0.0)


def test_zero_std_feature_named():
    X = np.zeros((2, 3, 2, 4))
    X[..., 2:] = np.random.default_rng(0).normal(size=(2, 3, 2, 2))
    with pytest.raises(ValidationError, match="'x'"):
        compute_stats(X)


def test_stats_from_train_do_not_standardise_test(corpus):
    X, _ = stack_samples(corpus)
    folds = grouped_kfold(corpus, k=3, seed=0)
    stats = compute_stats(X[folds[0].train])
    test_stats = compute_stats(X[folds[0].test])
    assert not np.allclose(stats.mean, test_stats.mean)


# ------------------------------------------------------------------- folds

def _groups(n):
    return list(range(n))


def test_six_groups_three_folds():
    folds = grouped_kfold(_groups(6), k=3, seed=0)
    tests = [set(f.test) for f in folds]
    assert all(len(t) == 2 for t in tests)
    assert set().union(*tests) == set(range(6))


def test_folds_partition_and_no_leakage(corpus):
    folds = grouped_kfold(corpus, k=3, seed=1)
    gids = np.array([s.group_id for s in corpus])
    assert check_no_leakage(corpus, folds)
    test_groups = [set(gids[f.test]) for f in folds]
    for g in set(gids):
        assert sum(g in t for t in test_groups) == 1
    for f in folds:
        assert len(f.train) and len(f.val) and len(f.test)
        assert len(set(f.train) | set(f.val) | set(f.test)) == len(corpus)


def test_too_few_groups():
    with pytest.raises(ValidationError):
        grouped_kfold(_groups(4), k=3)


def test_regime_balance_is_reported(corpus):
    report = regime_balance(corpus, grouped_kfold(corpus, 3, seed=0))
    assert len(report) == 3
    for row in report:
        assert sum(sum(row[s].values()) for s in ("train", "val", "test")) == len(corpus)


# --------------------------------------------------------------------- I/O

def test_dataset_round_trip(tmp_path, corpus):
    path = tmp_path / "d.bin"
    write_dataset(path, corpus)
    back = read_dataset(path)
    assert len(back) == len(corpus) and all(a == b for a, b in zip(back, corpus))


def test_truncated_file_is_a_parse_error(tmp_path, corpus):
    path = tmp_path / "d.bin"
    write_dataset(path, corpus)
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(FormatError) as exc:
        read_dataset(path)
    assert exc.value.offset == len(blob) - 100
    path.write_bytes(blob[:10])
    with pytest.raises(FormatError):
        read_dataset(path)


def test_checksum_and_version_errors(tmp_path, corpus):
    path = tmp_path / "d.bin"
    write_dataset(path, corpus)
    blob = bytearray(path.read_bytes())
    tampered = blob.copy()
    tampered[-3] ^= 0xFF
    path.write_bytes(bytes(tampered))
    with pytest.raises(IntegrityError):
        read_dataset(path)
    versioned = blob.copy()
    versioned[8] = 99
    path.write_bytes(bytes(versioned))
    with pytest.raises(VersionError):
        read_dataset(path)
    path.write_bytes(b"NOTADATA" + bytes(blob[8:]))
    with pytest.raises(FormatError) as exc:
        read_dataset(path)
    assert exc.value.offset == 0


def test_json_debug_export(tmp_path, corpus):
    import json
    export_dataset_json(tmp_path / "d.json", corpus[:2])
    doc = json.loads((tmp_path / "d.json").read_text())
    assert len(doc["samples"]) == 2
    np.testing.assert_array_equal(doc["samples"][0]["trajectory"], corpus[0].trajectory)
