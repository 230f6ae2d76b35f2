"""Dense float64 tensors with reverse-mode automatic differentiation.

A thread-local tape records every executed op in order; backward() replays
the tape in exact reverse, so each recorded node is touched once per call.
Gradients accumulate into .grad until explicitly zeroed, matching the usual
optimizer loop. Everything is float64: the posterior-equivalence checks in
the test suite run at 1e-10 tolerances and need the precision.
"""

import threading

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tape:
    """Execution-ordered op record walked in reverse by backward().

    clear() empties the record and bumps an epoch counter; tensors recorded
    under an older epoch refuse to backpropagate instead of silently reading
    a foreign tape.
    """

    def __init__(self):
        self.nodes = []  # (out_tensor, input_tensors, backward_fn)
        self.epoch = 0

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))

    def clear(self):
        self.nodes.clear()
        self.epoch += 1


_local = threading.local()


def active_tape():
    """The calling thread's tape, created on first use."""
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def fresh_tape():
    """Clear the calling thread's tape and return it.

    Call between training steps; intermediate tensors from earlier steps
    become non-backpropagatable and their graph memory is released.
    """
    tape = active_tape()
    tape.clear()
    return tape


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape", "_epoch")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._tape = None
        self._epoch = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; plain numbers are lifted to constant tensors
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
        return matmul(self, other)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, inputs, backward_fn):
    out = Tensor(out_data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        tape = active_tape()
        out._tape = tape
        out._epoch = tape.epoch
        tape.record(out, inputs, backward_fn)
    return out


def backward(loss):
    """Accumulate d(loss)/d(tensor) into .grad for every reachable tensor.

    Repeated calls without zero_grad() keep accumulating. The walk keeps its
    own flow map, so a second call doubles leaf gradients instead of
    compounding through intermediates.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise RuntimeError("loss is not recorded on any tape (no grad-requiring inputs?)")
    if loss._epoch != tape.epoch:
        raise RuntimeError("tape was cleared after this tensor was computed")
    flows = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    # reverse execution order: every consumer of a tensor was recorded after
    # its producer, so flows[producer output] is complete when reached
    for out, inputs, backward_fn in reversed(tape.nodes):
        g = flows.get(id(out))
        if g is None:
            continue
        for t, gin in zip(inputs, backward_fn(g)):
            if gin is None or not t.requires_grad:
                continue
            key = id(t)
            if key in flows:
                flows[key] = flows[key] + gin
            else:
                flows[key] = gin
                holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            t.grad += flows[key]


def _unbroadcast(g, shape):
    """Sum g over dimensions that were broadcast to reach its shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(x, y, fwd):
    try:
        return fwd(x.data, y.data)
    except ValueError as exc:
        raise ShapeMismatchError(f"incompatible shapes {x.shape} and {y.shape}") from exc


def add(x, y):
    out = _binary(x, y, np.add)
    return _make(out, (x, y), lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(x, y):
    out = _binary(x, y, np.subtract)
    return _make(out, (x, y), lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)))


def mul(x, y):
    out = _binary(x, y, np.multiply)

    def back(g):
        return (_unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape))

    return _make(out, (x, y), back)


def div(x, y):
    if np.any(y.data == 0.0):
        raise DomainError("division by zero")
    out = _binary(x, y, np.divide)

    def back(g):
        return (
            _unbroadcast(g / y.data, x.shape),
            _unbroadcast(-g * x.data / (y.data * y.data), y.shape),
        )

    return _make(out, (x, y), back)


def neg(x):
    return _make(-x.data, (x,), lambda g: (-g,))


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x):
    # stable two-branch evaluation
    z = x.data
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def melu(x):
    """Modified exponential linear unit: 1+x for x>0, e^x otherwise.

    Strictly positive, continuously differentiable (slope 1 from both sides
    at 0), so it can act as the positive output activation of a kernel
    network without killing gradients.
    """
    pos = x.data > 0
    out = np.where(pos, 1.0 + x.data, np.exp(np.minimum(x.data, 0.0)))
    # for x<=0 the local slope equals the output itself
    return _make(out, (x,), lambda g: (g * np.where(pos, 1.0, out),))


def matmul(a, b):
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise ShapeMismatchError("matmul supports 1-D and 2-D operands")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeMismatchError(f"inner dimensions differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def back(g):
        if ad.ndim == 1 and bd.ndim == 1:  # dot -> scalar
            return (g * bd, g * ad)
        if ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            return (bd @ g, np.outer(ad, g))
        if bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            return (np.outer(g, bd), ad.T @ g)
        return (g @ bd.T, ad.T @ g)

    return _make(out, (a, b), back)


def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _make(out, (x,), back)


def mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[axis]
    return tsum(x, axis=axis) * (1.0 / n)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeMismatchError("transpose expects a matrix")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(a, b, axis=-1):
    out = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis]

    def back(g):
        ga, gb = np.split(g, [split], axis=axis)
        return (ga, gb)

    return _make(out, (a, b), back)


def stack(rows):
    """Stack equally-shaped tensors along a new leading axis."""
    out = np.stack([r.data for r in rows])

    def back(g):
        return tuple(g[t] for t in range(len(rows)))

    return _make(out, tuple(rows), back)


def row(x, i):
    """Row i of a matrix, as a differentiable vector view."""
    if x.data.ndim != 2:
        raise ShapeMismatchError("row expects a matrix")

    def back(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)

    return _make(x.data[i].copy(), (x,), back)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), back)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), back)


def pick(x, indices):
    """Select x[t, indices[t]] for every row t of a matrix."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeMismatchError("pick expects a matrix")
    if idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise ShapeMismatchError("one index per row required")
    if np.any(idx < 0) or np.any(idx >= x.shape[1]):
        raise IndexError("pick index out of range")
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def back(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make(out, (x,), back)


def cross_entropy(logits, target):
    """Negative log-softmax probability of the target class.

    logits: 1-D scores over classes; target: class index. Stabilized by
    max-subtraction inside log_softmax.
    """
    if logits.data.ndim != 1:
        raise ShapeMismatchError("cross_entropy expects a 1-D logit vector")
    t = int(target)
    if t < 0 or t >= logits.shape[0]:
        raise IndexError(f"target {t} out of range for {logits.shape[0]} classes")
    row = reshape(logits, (1, logits.shape[0]))
    return neg(tsum(pick(log_softmax(row, axis=-1), [t])))


def sequence_cross_entropy(logits, targets):
    """Summed token-level cross-entropy over a (T, n_classes) logit matrix."""
    if logits.data.ndim != 2:
        raise ShapeMismatchError("sequence_cross_entropy expects a logit matrix")
    return neg(tsum(pick(log_softmax(logits, axis=-1), targets)))
