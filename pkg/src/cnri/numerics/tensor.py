"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op builds a fresh graph node holding its value and a closure mapping the
output gradient to the gradients of its parents.  Graphs are rebuilt per step;
nothing is cached between calls.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from cnri.errors import DimensionError, ValidationError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Intermediate nodes also keep their gradients.  Leaves that are not on a
        path to ``self`` are left with ``grad`` untouched (``None`` reads as zero
        through :func:`grad_of`).
        """
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("backward() on a non-scalar needs an explicit gradient")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def grad_of(t):
    """Gradient of ``t`` as an array; zeros when backward never reached it."""
    return np.zeros_like(t.data) if t.grad is None else t.grad


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(arr):
    t = Tensor.__new__(Tensor)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.flags.writeable:
        arr.flags.writeable = False
    t.data = arr
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._backward = None
    t.name = None
    return t


def _make(value, parents, backward):
    t = _wrap(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops

def add(a, b):
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    _broadcast_shape(a, b, "mul")
    av, bv = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, (a, b), backward)


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def linear(x, weight, bias=None):
    """Affine map over the last axis: ``x @ weight + bias`` for x of shape (..., in)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xv, wv = x.data, weight.data
    out = xv @ wv
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        grads = [g @ wv.T, x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


# ----------------------------------------------------------------- unary ops

def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x):
    xv = x.data
    neg = np.expm1(np.minimum(xv, 0.0))
    y = np.where(xv > 0, xv, neg)
    return _make(y, (x,), lambda g: (g * np.where(xv > 0, 1.0, neg + 1.0),))


def exp(x):
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x):
    xv = x.data
    return _make(np.log(xv), (x,), lambda g: (g / xv,))


def square(x):
    xv = x.data
    return _make(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def elementwise(op, *operands):
    """Dispatch by name; kept for callers that select activations from config."""
    table = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "sigmoid": sigmoid,
             "elu": elu, "relu": relu, "exp": exp, "log": log, "square": square,
             "identity": lambda t: t}
    try:
        fn = table[op]
    except KeyError:
        raise ValidationError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis=-1):
    xv = x.data
    if not np.all(np.isfinite(xv)):
        raise ValidationError("softmax: non-finite input")
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x, axis=-1):
    xv = x.data
    if not np.all(np.isfinite(xv)):
        raise ValidationError("log_softmax: non-finite input")
    shifted = xv - xv.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), backward)


# -------------------------------------------------------------- shape ops

def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=-1):
    tensors = list(tensors)
    if not tensors:
        raise ValidationError("concat: empty input")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {ax}")
    if len(tensors) == 1:
        return tensors[0]
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, sizes, axis=ax)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors, axis=0):
    tensors = list(tensors)
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes {shape} and {t.shape} differ")
    n = len(tensors)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def take(x, index, axis):
    """Gather slices ``index`` along ``axis`` (index is a fixed integer array)."""
    index = np.asarray(index)
    size = x.shape[axis]

    def backward(g):
        onehot = np.zeros((len(index), size))
        onehot[np.arange(len(index)), index] = 1.0
        return (np.moveaxis(np.moveaxis(g, axis, -1) @ onehot, -1, axis),)

    return _make(np.take(x.data, index, axis=axis), (x,), backward)


def scatter_sum(x, index, size, axis):
    """Sum slices of ``x`` along ``axis`` into ``size`` buckets given by ``index``."""
    index = np.asarray(index)
    onehot = np.zeros((size, len(index)))
    onehot[index, np.arange(len(index))] = 1.0
    moved = np.moveaxis(x.data, axis, -1)
    out = np.moveaxis(moved @ onehot.T, -1, axis)

    def backward(g):
        return (np.take(g, index, axis=axis),)

    return _make(out, (x,), backward)


def broadcast_to(x, shape):
    old = x.shape
    return _make(np.broadcast_to(x.data, shape), (x,), lambda g: (_unbroadcast(g, old),))


def index_last(x, i):
    """``x[..., i]`` keeping the axis (shape (..., 1))."""
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[..., i:i + 1] = g
        return (out,)

    return _make(x.data[..., i:i + 1], (x,), backward)


# ------------------------------------------------------------ model blocks

def dropout(x, rate, training, rng):
    """Inverted dropout; identity outside training or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """Gated recurrent unit step; gate order in the 3H axis is (reset, update, candidate)."""
    H = h.shape[-1]
    if w_ih.shape != (x.shape[-1], 3 * H) or w_hh.shape != (H, 3 * H):
        raise DimensionError(
            f"gru_cell: input {x.shape}, hidden {h.shape} incompatible with "
            f"weights {w_ih.shape}, {w_hh.shape}")
    xv, hv = x.data, h.data
    gi = xv @ w_ih.data + b_ih.data
    gh = hv @ w_hh.data + b_hh.data
    r = 0.5 * (1.0 + np.tanh(0.5 * (gi[..., :H] + gh[..., :H])))
    u = 0.5 * (1.0 + np.tanh(0.5 * (gi[..., H:2 * H] + gh[..., H:2 * H])))
    ghn = gh[..., 2 * H:]
    n = np.tanh(gi[..., 2 * H:] + r * ghn)
    out = (1.0 - u) * n + u * hv

    def backward(g):
        dan = g * (1.0 - u) * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        dau = g * (hv - n) * u * (1.0 - u)
        dgi = np.concatenate([dar, dau, dan], axis=-1)
        dgh = np.concatenate([dar, dau, dan * r], axis=-1)
        dgi2 = dgi.reshape(-1, 3 * H)
        dgh2 = dgh.reshape(-1, 3 * H)
        return (dgi @ w_ih.data.T,
                dgh @ w_hh.data.T + g * u,
                xv.reshape(-1, xv.shape[-1]).T @ dgi2,
                hv.reshape(-1, H).T @ dgh2,
                dgi2.sum(axis=0),
                dgh2.sum(axis=0))

    return _make(out, (x, h, w_ih, w_hh, b_ih, b_hh), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-feature normalisation over all leading axes.

    In training mode uses batch statistics and updates the running buffers in
    place (they are plain arrays owned by the calling layer).
    """
    F = x.shape[-1]
    xv = x.data.reshape(-1, F)
    n = xv.shape[0]
    if training:
        mu = xv.mean(axis=0)
        var = xv.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, F)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * gamma.data
        if training:
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx.reshape(x.shape), dgamma, dbeta

    return _make(out, (x, gamma, beta), backward)


def gumbel(shape, rng):
    """Standard Gumbel(0, 1) draws."""
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))


LN_2PI = math.log(2.0 * math.pi)
