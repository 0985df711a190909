"""Parameter containers built on the tensor ops.

A :class:`Module` discovers parameters (trainable :class:`Tensor` leaves),
buffers (plain arrays, e.g. batch-norm running statistics) and child modules
from its attributes, in definition order, so names are stable across runs.
"""
from __future__ import annotations

import numpy as np

from cnri.numerics import tensor as T
from cnri.numerics.tensor import Tensor


def parameter(array, name=None):
    return Tensor(array, requires_grad=True, name=name)


class Module:
    training = True

    def named_parameters(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            full = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    out.update(child.named_parameters(f"{full}.{i}."))
        return out

    def named_buffers(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            full = f"{prefix}{key}"
            if isinstance(value, np.ndarray):
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_buffers(full + "."))
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    out.update(child.named_buffers(f"{full}.{i}."))
        return out

    def modules(self):
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for child in value:
                    yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters().items()}
        state.update({name: b for name, b in self.named_buffers().items()})
        return state

    def load_state_dict(self, state):
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            arr = np.array(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            arr.flags.writeable = False
            p.data = arr
        for name, b in buffers.items():
            b[...] = state[name]


class Linear(Module):
    def __init__(self, n_in, n_out, rng, init="xavier", bias_fill=None):
        if init == "xavier":
            w = rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))
        else:
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        if bias_fill is None:
            bound = 1.0 / np.sqrt(n_in)
            b = rng.uniform(-bound, bound, size=n_out)
        else:
            b = np.full(n_out, float(bias_fill))
        self.weight = parameter(w)
        self.bias = parameter(b)

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, n_features, momentum=0.1):
        self.gamma = parameter(np.ones(n_features))
        self.beta = parameter(np.zeros(n_features))
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self._momentum = momentum

    def __call__(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self._momentum)


class MLP(Module):
    """Two affine layers, ELU after each, dropout on the hidden layer.

    ``batchnorm=True`` appends per-feature batch normalisation (encoder blocks);
    ``out_activation=False`` leaves the second layer linear.
    """

    def __init__(self, n_in, n_hid, n_out, rng, dropout=0.0, batchnorm=False,
                 out_activation=True, init="xavier", bias_fill=0.1):
        self.fc1 = Linear(n_in, n_hid, rng, init, bias_fill)
        self.fc2 = Linear(n_hid, n_out, rng, init, bias_fill)
        self.bn = BatchNorm(n_out) if batchnorm else None
        self._dropout = dropout
        self._out_activation = out_activation

    def __call__(self, x, rng=None):
        h = T.dropout(T.elu(self.fc1(x)), self._dropout, self.training, rng)
        h = self.fc2(h)
        if self._out_activation:
            h = T.elu(h)
        if self.bn is not None:
            h = self.bn(h)
        return h


class EdgeMLP(MLP):
    """MLP applied to ``[h_send, h_recv]`` for every ordered pair.

    The first affine layer is split into sender and receiver blocks applied
    per node before gathering, which equals the layer on the concatenation
    but costs O(M) instead of O(M^2) matrix products.
    """

    def __init__(self, n_node, n_hid, n_out, rng, **kw):
        super().__init__(2 * n_node, n_hid, n_out, rng, **kw)
        w = self.fc1.weight.data
        self.w_send = parameter(w[:n_node])
        self.w_recv = parameter(w[n_node:])
        self.b_in = self.fc1.bias
        self.fc1 = None

    def __call__(self, nodes, send, recv, rng=None):
        a = T.take(T.linear(nodes, self.w_send, self.b_in), send, axis=-2)
        b = T.take(T.linear(nodes, self.w_recv), recv, axis=-2)
        h = T.dropout(T.elu(T.add(a, b)), self._dropout, self.training, rng)
        h = self.fc2(h)
        if self._out_activation:
            h = T.elu(h)
        if self.bn is not None:
            h = self.bn(h)
        return h


class GRUCell(Module):
    def __init__(self, n_in, n_hid, rng):
        bound = 1.0 / np.sqrt(n_hid)
        self.w_ih = parameter(rng.uniform(-bound, bound, size=(n_in, 3 * n_hid)))
        self.w_hh = parameter(rng.uniform(-bound, bound, size=(n_hid, 3 * n_hid)))
        self.b_ih = parameter(rng.uniform(-bound, bound, size=3 * n_hid))
        self.b_hh = parameter(rng.uniform(-bound, bound, size=3 * n_hid))

    def __call__(self, x, h):
        return T.gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


def edge_index(n_nodes):
    """Sender/receiver arrays over ordered pairs i != j, row-major in (i, j)."""
    send, recv = [], []
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j:
                send.append(i)
                recv.append(j)
    return np.array(send), np.array(recv)
