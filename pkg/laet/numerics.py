"""
Dense float64 tensors with reverse-mode differentiation.

Forward math runs through a ComputationRecord: every operation computes its
value with numpy and, when gradients are needed, appends an entry holding
the closure that maps the output gradient to input gradients. backward()
walks those entries in reverse.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from constants import LOG_CLAMP, LAYER_NORM_EPS
from .errors import InvalidArgument, ContractViolation, NumericError


class Tensor:
    """n-dimensional float64 array with an optional gradient slot"""

    __slots__ = ('data', 'grad', 'requires_grad', 'name')

    def __init__(self, data, requires_grad=False, name=''):
        array = np.array(data, dtype=np.float64)
        if array.size == 0:
            raise InvalidArgument("tensor must hold at least one value")
        if not np.isfinite(array).all():
            raise NumericError(f"non-finite values in tensor '{name}'")
        self.data = np.ascontiguousarray(array)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _from_op(cls, array, requires_grad, op):
        # op outputs skip the copy but keep the finiteness invariant
        out = cls.__new__(cls)
        if not np.isfinite(array).all():
            raise NumericError(f"non-finite values produced by '{op}'")
        out.data = np.ascontiguousarray(array, dtype=np.float64)
        out.grad = None
        out.requires_grad = requires_grad
        out.name = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractViolation(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name!r})"


@dataclass
class RecordEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _constant(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class ComputationRecord:
    """Ordered log of the operations of one forward pass.

    A record is single-writer: one training step owns one record. An
    inference record computes the same values but never stores entries and
    marks every output as not requiring gradients.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.entries = []

    @classmethod
    def inference(cls):
        return cls(enabled=False)

    def topology(self):
        """(operation id, input tensor ids, output tensor id) per entry"""
        return [(e.op, tuple(id(t) for t in e.inputs), id(e.output)) for e in self.entries]

    def _emit(self, op, array, inputs, backward):
        tracked = self.enabled and any(t.requires_grad for t in inputs)
        out = Tensor._from_op(array, tracked, op)
        if tracked:
            self.entries.append(RecordEntry(op, tuple(inputs), out, backward))
        return out

    # --- elementwise ---

    def add(self, a, b):
        a, b = _constant(a), _constant(b)
        return self._emit('add', a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    def sub(self, a, b):
        a, b = _constant(a), _constant(b)
        return self._emit('sub', a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))

    def mul(self, a, b):
        a, b = _constant(a), _constant(b)
        return self._emit('mul', a.data * b.data, (a, b),
                          lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    def scale(self, a, factor):
        factor = float(factor)
        return self._emit('scale', a.data * factor, (a,), lambda g: (g * factor,))

    def add_n(self, tensors):
        if not tensors:
            raise ContractViolation("add_n needs at least one tensor")
        total = tensors[0].data.copy()
        for t in tensors[1:]:
            total = total + t.data
        return self._emit('add_n', total, tuple(tensors), lambda g: tuple(g for _ in tensors))

    def relu(self, a):
        mask = a.data > 0
        return self._emit('relu', np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def gelu(self, a):
        # exact form x * Phi(x)
        cdf = special.ndtr(a.data)

        def backward(g):
            pdf = np.exp(-0.5 * a.data ** 2) / np.sqrt(2.0 * np.pi)
            return (g * (cdf + a.data * pdf),)
        return self._emit('gelu', a.data * cdf, (a,), backward)

    # --- shape ---

    def reshape(self, a, shape):
        original = a.shape
        return self._emit('reshape', a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))

    def transpose(self, a, axes):
        inverse = np.argsort(axes)
        return self._emit('transpose', np.transpose(a.data, axes), (a,),
                          lambda g: (np.transpose(g, inverse),))

    def narrow(self, a, length):
        """First `length` entries along axis 0"""
        def backward(g):
            full = np.zeros_like(a.data)
            full[:length] = g
            return (full,)
        return self._emit('narrow', a.data[:length], (a,), backward)

    def sum(self, a, axis=None):
        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
        return self._emit('sum', np.sum(a.data, axis=axis), (a,), backward)

    def gather_rows(self, table, ids):
        """Embedding lookup: table[ids] for an integer index array"""
        ids = np.asarray(ids, dtype=np.int64)

        def backward(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            return (full,)
        return self._emit('gather_rows', table.data[ids], (table,), backward)

    def take_positions(self, a, positions):
        """Row positions[b] of every batch element b of a (B, n, d) tensor"""
        batch = np.arange(a.shape[0])
        positions = np.asarray(positions, dtype=np.int64)

        def backward(g):
            full = np.zeros_like(a.data)
            full[batch, positions] = g
            return (full,)
        return self._emit('take_positions', a.data[batch, positions], (a,), backward)

    # --- linear algebra ---

    def matmul(self, a, b):
        def backward(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            if b.data.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            return ga, gb
        return self._emit('matmul', np.matmul(a.data, b.data), (a, b), backward)

    def layer_norm(self, x, gain, bias, eps=LAYER_NORM_EPS):
        mean = x.data.mean(axis=-1, keepdims=True)
        centered = x.data - mean
        inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
        normed = centered * inv_std

        def backward(g):
            g_normed = g * gain.data
            gx = inv_std * (g_normed
                            - g_normed.mean(axis=-1, keepdims=True)
                            - normed * (g_normed * normed).mean(axis=-1, keepdims=True))
            lead = tuple(range(g.ndim - 1))
            return gx, (g * normed).sum(axis=lead), g.sum(axis=lead)
        return self._emit('layer_norm', normed * gain.data + bias.data, (x, gain, bias), backward)

    # --- probabilities and losses ---

    def softmax(self, a):
        probs = special.softmax(a.data, axis=-1)

        def backward(g):
            return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)
        return self._emit('softmax', probs, (a,), backward)

    def causal_softmax(self, scores, bias=None):
        """Softmax over the last axis with key j masked out for query i < j.

        `bias` is a constant array added to the scores before masking; it must
        broadcast against them.
        """
        n = scores.shape[-1]
        blocked = np.triu(np.ones((n, n), dtype=bool), k=1)
        logits = scores.data if bias is None else scores.data + bias
        probs = special.softmax(np.where(blocked, -np.inf, logits), axis=-1)

        def backward(g):
            return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)
        return self._emit('causal_softmax', probs, (scores,), backward)

    def softmax_cross_entropy(self, logits, labels):
        """Mean over the batch of -log(max(softmax(z)[y], eps))"""
        labels = np.asarray(labels, dtype=np.int64)
        batch = np.arange(logits.shape[0])
        k = logits.shape[-1]
        if labels.min() < 0 or labels.max() >= k:
            raise InvalidArgument(f"label out of range for {k} classes")
        probs = special.softmax(logits.data, axis=-1)
        picked = probs[batch, labels]
        loss = -np.log(np.maximum(picked, LOG_CLAMP)).mean()

        def backward(g):
            grad = probs.copy()
            grad[batch, labels] -= 1.0
            grad[picked < LOG_CLAMP] = 0.0
            return (grad * (g / len(batch)),)
        return self._emit('softmax_cross_entropy', np.asarray(loss), (logits,), backward)

    def mean_squared_error(self, predictions, targets):
        targets = np.asarray(targets, dtype=np.float64).reshape(predictions.shape)
        diff = predictions.data - targets

        def backward(g):
            return (g * 2.0 * diff / diff.size,)
        return self._emit('mean_squared_error', np.asarray((diff ** 2).mean()), (predictions,), backward)


def backward(record, loss):
    """Populate grad slots of every requires_grad tensor reachable from loss"""
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for entry in reversed(record.entries):
        g = pending.pop(id(entry.output), None)
        if g is None:
            continue
        entry.output.grad = g if entry.output.grad is None else entry.output.grad + g
        for tensor, tensor_grad in zip(entry.inputs, entry.backward(g)):
            if not tensor.requires_grad:
                continue
            key = id(tensor)
            pending[key] = tensor_grad if key not in pending else pending[key] + tensor_grad
            leaves[key] = tensor
    # whatever is still pending was never produced by a recorded op: parameters
    for key, g in pending.items():
        tensor = leaves.get(key)
        if tensor is None:
            continue
        tensor.grad = g.reshape(tensor.shape) if tensor.grad is None else tensor.grad + g.reshape(tensor.shape)


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise InvalidArgument("softmax of an empty vector")
    if not np.isfinite(logits).all():
        raise InvalidArgument("softmax needs finite logits")
    return special.softmax(logits, axis=-1)


def cross_entropy(probs, label):
    """-log(max(probs[label], eps)); a 2-D probs with a label array averages over rows"""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    rows = np.atleast_2d(probs)
    k = rows.shape[-1]
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidArgument(f"label out of range for {k} classes")
    picked = rows[np.arange(rows.shape[0]), labels]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())


def finite_diff_gradient(f, x, h=1e-5, indices=None):
    """Central differences of scalar f with respect to tensor x.

    x.data is perturbed in place and restored; `indices` limits the flat
    coordinates evaluated (the others are left at zero).
    """
    if h <= 0:
        raise InvalidArgument("step size must be positive")
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.shape)
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        original = flat[i]
        flat[i] = original + h
        upper = f(x)
        flat[i] = original - h
        lower = f(x)
        flat[i] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (upper - lower) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))


def relative_error(analytic, numeric):
    """max |a - n| scaled by the larger of the two max magnitudes"""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def global_grad_norm(tensors):
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad ** 2).sum())
    return float(np.sqrt(total))
