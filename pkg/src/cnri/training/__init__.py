from cnri.training.objectives import (
    DEFAULT_EDGE_PRIOR, kl_categorical, kl_categorical_probs, reconstruction_nll,
)

__all__ = ["DEFAULT_EDGE_PRIOR", "kl_categorical", "kl_categorical_probs", "reconstruction_nll"]
