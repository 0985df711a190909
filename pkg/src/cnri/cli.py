"""``cnri`` command line: simulate, train, generate, evaluate.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical fault.  Failures print one JSON object to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from cnri.data import (
    DatasetConfig, generate_dataset, grouped_kfold, read_dataset, regime_balance, summarize, write_dataset,
)
from cnri.errors import (
    CNRIError, DecodeFault, FormatError, MissingArtifactError, RegimeMismatchError, SimulationFault,
    TrainingFault, ValidationError,
)
from cnri.training.trainer import REGIMES, TrainingConfig, write_history_csv

log = logging.getLogger("cnri")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCHEMA_VERSION = 1
FEATURES = ("x", "y", "vx", "vy")


@dataclass
class ExperimentConfig:
    """Everything one command needs; serialised into every output directory."""

    seed: int = 0
    n_systems: int = 60
    cycles_per_system: tuple = (3, 8)
    folds: int = 3
    val_fraction: float = 0.2
    models: str = ""
    dataset: str | None = None
    out: str = "runs"
    parallel_folds: bool = False
    data: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cycles_per_system = tuple(self.cycles_per_system)
        if self.folds < 2:
            raise ValidationError(f"need at least 2 folds, got {self.folds}")
        if self.n_systems < self.folds + 2:
            raise ValidationError(
                f"{self.n_systems} systems cannot fill {self.folds} folds plus validation "
                f"(need at least {self.folds + 2})")
        self.data_config()
        self.training_config()

    def data_config(self):
        return DatasetConfig.from_dict(self.data)

    def training_config(self):
        return TrainingConfig.from_dict({"seed": self.seed, **self.training})

    def to_dict(self):
        d = asdict(self)
        d["cycles_per_system"] = list(self.cycles_per_system)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    return doc


def resolve_config(args):
    """Config file values overridden by explicit flags."""
    doc = load_config(args.config)
    doc.setdefault("training", {})
    doc["training"] = dict(doc["training"])
    for flag in ("seed", "dataset", "out", "models", "folds"):
        value = getattr(args, flag, None)
        if value is not None:
            doc[flag] = value
    if getattr(args, "parallel_folds", False):
        doc["parallel_folds"] = True
    if getattr(args, "regime", None) is not None:
        doc["training"]["regime"] = args.regime
    if getattr(args, "epochs", None) is not None:
        doc["training"]["epochs"] = args.epochs
    if getattr(args, "n_systems", None) is not None:
        doc["n_systems"] = args.n_systems
    return ExperimentConfig.from_dict(doc)


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _archive(out, cfg, command):
    (out / "resolved_config.json").write_text(
        json.dumps({"command": command, **cfg.to_dict()}, indent=2, sort_keys=True))


def _require_dataset(cfg):
    if not cfg.dataset:
        raise MissingArtifactError("no dataset given; pass --dataset or set 'dataset' in the config")
    return read_dataset(cfg.dataset)


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    samples = generate_dataset(cfg.n_systems, cfg.cycles_per_system, cfg.data_config(), seed=cfg.seed)
    path = out / "dataset.bin"
    digest = write_dataset(path, samples, {"seed": cfg.seed, "data": cfg.data_config().to_dict()})
    summary = summarize(samples)
    doc = {"schema_version": SCHEMA_VERSION, "path": str(path), "sha256": digest,
           "n_samples": summary.n_samples, "n_systems": summary.n_groups, "shape": list(summary.shape),
           "condition_dim": summary.condition_dim,
           "regime_counts": {str(k): v for k, v in summary.regime_counts.items()}}
    (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    _archive(out, cfg, "simulate")
    print(json.dumps(doc))
    return EXIT_OK


# ------------------------------------------------------------------- train

def _model_names(cfg):
    from cnri.evaluation.benchmark import parse_models
    return parse_models(cfg.models) if cfg.models else [cfg.training_config().regime]


def _train_one_fold(dataset_path, cfg_dict, fold_id, names, out_dir):
    """Worker body shared by the serial and process-parallel paths."""
    from cnri.evaluation.benchmark import train_named_model
    from cnri.training.checkpoint import save_checkpoint

    cfg = ExperimentConfig.from_dict(cfg_dict)
    samples = read_dataset(dataset_path)
    folds = grouped_kfold(samples, cfg.folds, seed=cfg.seed, val_fraction=cfg.val_fraction)
    fold_dir = Path(out_dir) / f"fold{fold_id}"
    fold_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for name in names:
        tm = train_named_model(name, samples, folds[fold_id], fold_id, cfg.training_config())
        save_checkpoint(fold_dir / f"{name}.ckpt", tm.checkpoint)
        if tm.history:
            write_history_csv(fold_dir / f"{name}_history.csv", tm.history)
        agg = getattr(tm.model, "aggregate_posterior", None)
        if agg is not None:
            write_posterior(fold_dir / f"{name}_posterior.json", agg)
        final = tm.history[-1]["train_loss"] if tm.history else None
        results[name] = {"best_epoch": tm.checkpoint.epoch, "final_train_loss": final,
                         "seconds": round(tm.seconds, 3)}
    return fold_id, results


def cmd_train(args):
    cfg = resolve_config(args)
    names = _model_names(cfg)
    samples = _require_dataset(cfg)
    folds = grouped_kfold(samples, cfg.folds, seed=cfg.seed, val_fraction=cfg.val_fraction)
    out = _out_dir(cfg)
    _archive(out, cfg, "train")
    (out / "folds.json").write_text(json.dumps(
        {"folds": [{s: getattr(f, s).tolist() for s in ("train", "val", "test")} for f in folds],
         "regime_balance": regime_balance(samples, folds)}, indent=2))
    jobs = [(cfg.dataset, cfg.to_dict(), k, names, str(out)) for k in range(len(folds))]
    if cfg.parallel_folds and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            done = list(pool.map(_train_one_fold, *zip(*jobs)))
    else:
        done = [_train_one_fold(*job) for job in jobs]
    summary = {"schema_version": SCHEMA_VERSION, "models": names,
               "folds": {str(k): r for k, r in sorted(done)}}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------- generate

def write_posterior(path, probs):
    probs = np.asarray(probs, dtype=np.float64)
    Path(path).write_text(json.dumps({"schema_version": SCHEMA_VERSION, "shape": list(probs.shape),
                                      "values": probs.reshape(-1).tolist()}))


def read_posterior(path):
    try:
        doc = json.loads(Path(path).read_text())
        return np.asarray(doc["values"], dtype=np.float64).reshape(doc["shape"])
    except FileNotFoundError:
        raise MissingArtifactError(f"aggregate posterior file {path} does not exist") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"aggregate posterior file {path} is malformed: {exc}") from None


def _read_vector(path):
    text = Path(path).read_text().strip()
    try:
        return np.asarray(json.loads(text), dtype=np.float64)
    except json.JSONDecodeError:
        rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
        return np.asarray(rows, dtype=np.float64).squeeze()


def _trained_length(ckpt):
    if ckpt.kind == "mean":
        return ckpt.tensors["global_mean"].shape[0]
    if ckpt.kind == "rnn":
        return ckpt.config["model"]["n_frames"]
    return ckpt.config["n_frames"]


def cmd_generate(args):
    from cnri.evaluation.benchmark import conditional_generate
    from cnri.training.checkpoint import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint, expected_regime=args.regime)
    variational = ckpt.kind == "cnri" and ckpt.regime in ("nri", "fnri")
    aggregate = None
    if variational:
        if not args.posterior:
            raise MissingArtifactError(
                f"regime {ckpt.regime!r} generates from an aggregate posterior; pass --posterior FILE "
                "(written by 'cnri train' as <model>_posterior.json)")
        aggregate = read_posterior(args.posterior)
    if args.dataset is not None:
        samples = read_dataset(args.dataset)
        if not 0 <= args.sample < len(samples):
            raise ValidationError(f"sample index {args.sample} outside 0..{len(samples) - 1}")
        c, x1 = samples[args.sample].condition, samples[args.sample].trajectory[0]
    else:
        if args.condition is None or args.x1 is None:
            raise ValidationError("pass --dataset/--sample or both --condition and --x1")
        c, x1 = _read_vector(args.condition), _read_vector(args.x1)
    n_frames = args.frames or _trained_length(ckpt)
    rng = np.random.default_rng(args.seed)
    traj = conditional_generate(ckpt, c, x1, n_frames, rng, sample=args.sample_latent, aggregate=aggregate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    M, D = traj.shape[1:]
    with open(out / "generated.csv", "w", newline="") as fh:
        fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow([f"body{m}_{FEATURES[d] if d < len(FEATURES) else d}" for m in range(M) for d in range(D)])
        writer.writerows([[repr(float(v)) for v in frame.reshape(-1)] for frame in traj])
    meta = {"schema_version": SCHEMA_VERSION, "checkpoint": str(args.checkpoint), "kind": ckpt.kind,
            "regime": ckpt.regime, "model": ckpt.metadata.get("model_name"), "n_frames": int(n_frames),
            "n_bodies": int(M), "n_features": int(D), "seed": args.seed, "sample_latent": args.sample_latent,
            "posterior": args.posterior, "condition": c.tolist(), "x1": np.asarray(x1).tolist()}
    (out / "generated.json").write_text(json.dumps(meta, indent=2))
    print(json.dumps({"csv": str(out / "generated.csv"), "rows": int(n_frames)}))
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args):
    from cnri.evaluation.benchmark import export_interaction_maps, needs_training, parse_models, run_benchmark

    cfg = resolve_config(args)
    names = parse_models(cfg.models or "mean,improved_mean")
    samples = _require_dataset(cfg)
    folds = grouped_kfold(samples, cfg.folds, seed=cfg.seed, val_fraction=cfg.val_fraction)
    out = _out_dir(cfg)
    _archive(out, cfg, "evaluate")
    if not needs_training(names):
        log.info("mean baselines only: no training")
    report, trained = run_benchmark(samples, names, folds, cfg.training_config(), cfg.seed, keep_models=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    export_interaction_maps(trained, samples, out / "interaction_maps")
    print(json.dumps({r["model"]: {"mse_mean": r["mse_mean"], "mse_std": r["mse_std"]} for r in report.rows}))
    return EXIT_OK


# -------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report_error("UsageError", message, EXIT_USAGE)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="cnri", description="Conditional relational trajectory models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON experiment config (flags override it)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic spring corpus")
    common(p)
    p.add_argument("--n-systems", type=int, dest="n_systems")
    p.add_argument("--folds", type=int, help="fold count the corpus must support")

    p = sub.add_parser("train", help="cross-validated training")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--models", help="comma-separated model names (overrides --regime)")
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--parallel-folds", action="store_true", dest="parallel_folds")

    p = sub.add_parser("generate", help="generate from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--regime", choices=REGIMES, help="reject checkpoints of another regime")
    p.add_argument("--posterior", help="aggregate posterior JSON (required for nri/fnri)")
    p.add_argument("--dataset", help="take c and x1 from this dataset")
    p.add_argument("--sample", type=int, default=0, help="sample index within --dataset")
    p.add_argument("--condition", help="condition vector file (JSON list or CSV)")
    p.add_argument("--x1", help="seed frame file, M rows of D values (JSON or CSV)")
    p.add_argument("--frames", type=int, help="trajectory length T")
    p.add_argument("--sample-latent", action="store_true", dest="sample_latent",
                   help="draw edge types from the aggregate posterior instead of its argmax")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="benchmark models across folds")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--models", help="comma-separated model names")
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    return parser


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "generate": cmd_generate, "evaluate": cmd_evaluate}


def _exit_code(exc):
    if isinstance(exc, (MissingArtifactError, RegimeMismatchError, ValidationError)):
        return EXIT_USAGE
    if isinstance(exc, (TrainingFault, DecodeFault, SimulationFault, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (FormatError, OSError, CNRIError)):
        return EXIT_DATA
    return None


def _report_error(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")


def main(argv=None):
    logging.basicConfig(level=os.environ.get("CNRI_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = _exit_code(exc)
        if code is None:
            raise
        _report_error(type(exc).__name__, str(exc), code)
        return code


if __name__ == "__main__":
    sys.exit(main())
