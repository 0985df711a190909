from cnri.evaluation.metrics import edge_recovery, mse_denormalized, per_sample_mse
from cnri.evaluation.posterior import aggregate_posterior, per_sample_posteriors

__all__ = ["aggregate_posterior", "edge_recovery", "mse_denormalized", "per_sample_mse",
           "per_sample_posteriors"]
