import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from cnri.cli import main
from cnri.data import read_dataset

SMALL = {"n_systems": 6, "cycles_per_system": [1, 2],
         "data": {"n_bodies": 3, "n_frames": 8, "sample_every": 20},
         "training": {"epochs": 2, "encoder_hidden": 6, "decoder_hidden": 6}}


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture()
def dataset(tmp_path, config):
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim" / "dataset.bin"


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_simulate_outputs(tmp_path, dataset):
    samples = read_dataset(dataset)
    summary = json.loads((dataset.parent / "summary.json").read_text())
    assert summary["n_samples"] == len(samples) and summary["shape"] == [8, 3, 4]
    resolved = json.loads((dataset.parent / "resolved_config.json").read_text())
    assert resolved["command"] == "simulate" and resolved["data"]["n_bodies"] == 3


def test_simulate_same_seed_same_checksum(tmp_path, config, dataset):
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "again")]) == 0
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()  # noqa: E731
    assert digest(tmp_path / "again" / "dataset.bin") == digest(dataset)
    assert main(["simulate", "--config", str(config), "--seed", "1", "--out", str(tmp_path / "other")]) == 0
    assert digest(tmp_path / "other" / "dataset.bin") != digest(dataset)


def test_simulate_rejects_too_few_systems_early(tmp_path, capsys):
    assert main(["simulate", "--n-systems", "2", "--out", str(tmp_path / "x")]) == 2
    assert "folds" in _error(capsys)["message"]
    assert not (tmp_path / "x").exists()


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n_systems": 6, "learning": 1}))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    assert _error(capsys)["error"] == "ValidationError"


def test_invalid_regime_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--regime", "vae"])
    assert exc.value.code == 2
    assert _error(capsys)["exit_code"] == 2


def test_train_outputs_and_rerun(tmp_path, config, dataset):
    args = ["train", "--config", str(config), "--dataset", str(dataset), "--regime", "pg"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for k in range(3):
        fold = tmp_path / "a" / f"fold{k}"
        assert (fold / "pg.ckpt").exists()
        assert (fold / "pg_history.csv").read_text().startswith("# schema-version: 1\n")
    a = json.loads((tmp_path / "a" / "train_summary.json").read_text())
    b = json.loads((tmp_path / "b" / "train_summary.json").read_text())
    strip = lambda s: {k: {m: v["final_train_loss"] for m, v in f.items()} for k, f in s["folds"].items()}  # noqa: E731
    assert strip(a) == strip(b)
    resolved = json.loads((tmp_path / "a" / "resolved_config.json").read_text())
    assert resolved["training"]["regime"] == "pg"


def test_parallel_folds_match_serial(tmp_path, config, dataset):
    base = ["train", "--config", str(config), "--dataset", str(dataset), "--models", "gru"]
    assert main(base + ["--out", str(tmp_path / "s")]) == 0
    assert main(base + ["--out", str(tmp_path / "p"), "--parallel-folds"]) == 0
    for k in range(3):
        assert (tmp_path / "s" / f"fold{k}" / "gru_history.csv").read_text() == \
            (tmp_path / "p" / f"fold{k}" / "gru_history.csv").read_text()


def test_generate_requires_posterior_for_nri(tmp_path, config, dataset, capsys):
    assert main(["train", "--config", str(config), "--dataset", str(dataset), "--regime", "nri",
                 "--out", str(tmp_path / "t")]) == 0
    ckpt = tmp_path / "t" / "fold0" / "nri.ckpt"
    code = main(["generate", "--checkpoint", str(ckpt), "--dataset", str(dataset), "--out", str(tmp_path / "g")])
    assert code == 2
    err = _error(capsys)
    assert err["error"] == "MissingArtifactError" and "posterior" in err["message"]

    posterior = tmp_path / "t" / "fold0" / "nri_posterior.json"
    assert main(["generate", "--checkpoint", str(ckpt), "--posterior", str(posterior), "--dataset", str(dataset),
                 "--sample", "1", "--frames", "6", "--out", str(tmp_path / "g")]) == 0
    rows = [r for r in (tmp_path / "g" / "generated.csv").read_text().splitlines() if not r.startswith("#")]
    assert len(rows) == 1 + 6
    first = np.array([float(v) for v in rows[1].split(",")])
    np.testing.assert_array_equal(first, read_dataset(dataset)[1].trajectory[0].reshape(-1))
    meta = json.loads((tmp_path / "g" / "generated.json").read_text())
    assert meta["n_frames"] == 6 and meta["regime"] == "nri"


def test_generate_regime_mismatch(tmp_path, config, dataset, capsys):
    assert main(["train", "--config", str(config), "--dataset", str(dataset), "--regime", "pg",
                 "--out", str(tmp_path / "t")]) == 0
    code = main(["generate", "--checkpoint", str(tmp_path / "t" / "fold0" / "pg.ckpt"), "--regime", "ig",
                 "--dataset", str(dataset), "--out", str(tmp_path / "g")])
    assert code == 2 and _error(capsys)["error"] == "RegimeMismatchError"


def test_generate_from_condition_files(tmp_path, config, dataset):
    assert main(["train", "--config", str(config), "--dataset", str(dataset), "--models", "improved_mean",
                 "--out", str(tmp_path / "t")]) == 0
    s = read_dataset(dataset)[0]
    (tmp_path / "c.json").write_text(json.dumps(s.condition.tolist()))
    (tmp_path / "x1.json").write_text(json.dumps(s.trajectory[0].tolist()))
    assert main(["generate", "--checkpoint", str(tmp_path / "t" / "fold1" / "improved_mean.ckpt"),
                 "--condition", str(tmp_path / "c.json"), "--x1", str(tmp_path / "x1.json"),
                 "--out", str(tmp_path / "g")]) == 0
    rows = [r for r in (tmp_path / "g" / "generated.csv").read_text().splitlines() if not r.startswith("#")]
    assert len(rows) == 1 + 8


def test_evaluate_mean_fast_path(tmp_path, config, dataset):
    out = tmp_path / "ev"
    assert main(["evaluate", "--config", str(config), "--dataset", str(dataset), "--models", "mean,improved_mean",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [r["model"] for r in report["rows"]] == ["mean", "improved_mean"]
    assert (out / "report.csv").read_text().startswith("# schema-version: 1\n")


def test_evaluate_with_training(tmp_path, config, dataset):
    out = tmp_path / "ev"
    assert main(["evaluate", "--config", str(config), "--dataset", str(dataset), "--models", "mean,pg,nri",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [r["model"] for r in report["rows"]] == ["mean", "pg", "nri"]
    assert (out / "interaction_maps" / "pg_fold0.csv").exists()


def test_missing_dataset_is_data_error(tmp_path, capsys):
    assert main(["train", "--dataset", str(tmp_path / "none.bin"), "--out", str(tmp_path / "t")]) == 3
    assert _error(capsys)["exit_code"] == 3


def test_corrupt_dataset_is_data_error(tmp_path, dataset, capsys):
    blob = bytearray(dataset.read_bytes())
    blob[-1] ^= 0xFF
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(blob))
    assert main(["evaluate", "--dataset", str(bad), "--out", str(tmp_path / "e")]) == 3
    assert _error(capsys)["error"] == "IntegrityError"


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cnri.cli", "evaluate", "--models", "bogus"],
                          capture_output=True, text=True, env={"CNRI_LOG": "debug", "PATH": ""}, cwd=tmp_path)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["exit_code"] == 2
