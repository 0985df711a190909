from cnri.data.dataset import (
    DatasetConfig, SystemSample, build_condition_vector, condition_dim, decode_condition_vector,
    generate_dataset, shared_graph, stack_samples, summarize,
)
from cnri.data.folds import Fold, check_no_leakage, grouped_kfold, regime_balance
from cnri.data.io import export_dataset_json, read_dataset, write_dataset
from cnri.data.normalize import (
    NormalizationStats, compute_stats, denormalize, denormalize_samples, normalize, normalize_samples,
)
from cnri.data.simulator import SystemSpec, simulate_spring_system, total_energy

__all__ = [
    "DatasetConfig", "Fold", "NormalizationStats", "SystemSample", "SystemSpec",
    "build_condition_vector", "check_no_leakage", "compute_stats", "condition_dim",
    "decode_condition_vector", "denormalize", "denormalize_samples", "export_dataset_json",
    "generate_dataset", "grouped_kfold", "normalize", "normalize_samples", "read_dataset",
    "regime_balance", "shared_graph", "simulate_spring_system", "stack_samples", "summarize",
    "total_energy", "write_dataset",
]
