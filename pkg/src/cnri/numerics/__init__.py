from cnri.numerics import tensor as ops
from cnri.numerics.gradcheck import backprop_gradient, finite_difference_gradient, max_relative_error
from cnri.numerics.layers import MLP, BatchNorm, EdgeMLP, GRUCell, Linear, Module, edge_index
from cnri.numerics.optim import AdamState, adam_step, step_decay_lr
from cnri.numerics.tensor import Tensor, grad_of, no_grad

__all__ = [
    "AdamState", "BatchNorm", "EdgeMLP", "GRUCell", "Linear", "MLP", "Module", "Tensor",
    "adam_step", "backprop_gradient", "edge_index", "finite_difference_gradient", "grad_of",
    "max_relative_error", "no_grad", "ops", "step_decay_lr",
]
