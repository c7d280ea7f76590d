"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Every operation that sees at least one
gradient-requiring input records its parents and a backward closure on
the result, so the computation graph doubles as the gradient tape:
`backward(loss)` walks it once in reverse topological order and
accumulates gradients additively into `.grad`.

Conventions:
  - data is float64 and treated as immutable once used in an op,
  - gradients have the exact shape of their tensor,
  - `backward` on the same loss twice is rejected (fresh forward per step).
"""

import numpy as np

from .errors import ContractError, DimensionError, NumericError


class Tensor:
    """n-d array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; constants are lifted to non-grad tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, backward):
    out = Tensor(data)
    if _tracked(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a):
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out_data = np.sqrt(a.data)
    # derivative clamped near zero so a zero-norm regularizer stays finite
    return _make(out_data, (a,), lambda g: (g * 0.5 / np.maximum(out_data, 1e-30),))


def sigmoid(a):
    out_data = np.where(a.data >= 0,
                        1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def softplus(a):
    out_data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward(g):
        s = np.where(a.data >= 0,
                     1.0 / (1.0 + np.exp(-np.abs(a.data))),
                     np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
        return (g * s,)

    return _make(out_data, (a,), backward)


def clamp_min(a, lo):
    """Elementwise max(a, lo); gradient passes only where a >= lo."""
    mask = a.data >= lo
    return _make(np.maximum(a.data, lo), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    """max(x, slope * x) with the conventional subgradient slope at 0."""
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = a.data > 0
    out_data = np.where(mask, a.data, slope * a.data)
    return _make(out_data, (a,), lambda g: (g * np.where(mask, 1.0, slope),))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def tmax(a, axis):
    """Max along one axis; gradient routes to the (first) arg-max entries."""
    out_data = a.data.max(axis=axis)
    hit = a.data == np.expand_dims(out_data, axis)
    first = np.cumsum(hit, axis=axis) == 1
    sel = hit & first

    def backward(g):
        return (np.where(sel, np.expand_dims(g, axis), 0.0),)

    return _make(out_data, (a,), backward)


def softmax_rows(a):
    """Row-wise softmax of a 2-d tensor, stabilized by max subtraction."""
    if a.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-d tensor, got {a.shape}")
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows input contains NaN")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), backward)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out_data, tuple(tensors), backward)


def cols(a, start, stop):
    """Contiguous column slice of a 2-d tensor."""
    out_data = a.data[:, start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(out_data, (a,), backward)


def gather_rows(a, index):
    """Rows of `a` selected by an integer index array (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64)
    out_data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out_data, (a,), backward)


def straight_through(hard, soft):
    """Forward the hard values, backpropagate through the soft surrogate."""
    hard_data = np.asarray(hard, dtype=np.float64)
    if hard_data.shape != soft.shape:
        raise DimensionError(f"straight_through shapes differ: {hard_data.shape} vs {soft.shape}")
    return _make(hard_data.copy(), (soft,), lambda g: (g.copy(),))


def logsumexp_stack(terms):
    """log(sum_i exp(t_i)) over a list of same-shape tensors, stabilized."""
    m = np.maximum.reduce([t.data for t in terms])
    acc = None
    for t in terms:
        e = exp(t - Tensor(m))
        acc = e if acc is None else acc + e
    return log(acc) + Tensor(m)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss, params=None):
    """Populate `.grad` for everything reachable from a scalar loss.

    If `params` (iterable of tensors) is given, parameters the loss does
    not depend on get explicit zero gradients. Calling backward twice on
    the same loss is rejected: gradients belong to exactly one forward.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_ran:
        raise ContractError("backward already ran for this loss; rebuild the forward pass")
    loss._backward_ran = True

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)
