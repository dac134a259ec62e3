'''Dense float64 tensors with a per-computation reverse-mode gradient tape.

Operations are plain functions. When a tape is passed (or one of the operands
was itself produced under a tape) and any operand requires gradients, the
operation records a node on the tape. `backward(loss)` replays the tape in
reverse, accumulates `.grad` on every taped tensor and clears the tape.
'''
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp, softmax as _softmax

from .errors import DimensionException, StateException, TargetIndexException

logger = logging.getLogger(__name__)


class Tensor:

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.velocity = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return "Tensor(shape={}, requires_grad={})".format(self.shape, self.requires_grad)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionException("item() needs a single-element tensor, got shape {}".format(self.shape))
        return float(self.data.reshape(-1)[0])

    @classmethod
    def wrap(cls, array):
        '''A constant tensor sharing `array` (no copy). The caller must not mutate it.'''
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=np.float64)
        tensor.requires_grad = False
        tensor.grad = None
        tensor.velocity = None
        tensor._tape = None
        return tensor

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def copy(self):
        '''A fresh leaf with the same values and gradient flag, no momentum buffer.'''
        return Tensor(self.data, requires_grad=self.requires_grad)


class _Node:
    __slots__ = ('result', 'operands', 'backward')

    def __init__(self, result, operands, backward):
        self.result = result
        self.operands = operands
        self.backward = backward


class GradTape:
    '''Append-only record of the operations of one computation.'''

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def watch(self, tensor):
        tensor.requires_grad = True
        return tensor

    def clear(self):
        self.nodes = []


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _active_tape(tape, operands):
    if tape is not None:
        return tape
    for operand in operands:
        if operand._tape is not None:
            return operand._tape
    return None


def _record(tape, result, operands, backward_fn):
    tape = _active_tape(tape, operands)
    if tape is None or not any(o.requires_grad for o in operands):
        return result
    result.requires_grad = True
    result._tape = tape
    tape.nodes.append(_Node(result, operands, backward_fn))
    return result


def matmul(a, b, tape=None):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionException("matmul needs two matrices, got shapes {} and {}".format(a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise DimensionException("inner dimensions differ: {} vs {}".format(a.shape, b.shape))

    out = Tensor(a.data @ b.data)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _record(tape, out, (a, b), backward)


def add(a, b, tape=None):
    '''Element-wise sum. `b` may also be a bias vector matching the last axis of `a`.'''
    a, b = _as_tensor(a), _as_tensor(b)
    bias = a.shape != b.shape
    if bias and not (b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]):
        raise DimensionException("cannot add shapes {} and {}".format(a.shape, b.shape))

    out = Tensor(a.data + b.data)

    def backward(g):
        if bias:
            return g, g.reshape(-1, b.shape[0]).sum(axis=0)
        return g, g

    return _record(tape, out, (a, b), backward)


def mul(a, b, tape=None):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionException("cannot multiply shapes {} and {}".format(a.shape, b.shape))

    out = Tensor(a.data * b.data)

    def backward(g):
        return g * b.data, g * a.data

    return _record(tape, out, (a, b), backward)


def scale(a, factor, tape=None):
    a = _as_tensor(a)
    out = Tensor(a.data * factor)

    def backward(g):
        return (g * factor,)

    return _record(tape, out, (a,), backward)


def relu(a, tape=None):
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))

    def backward(g):
        return (g * mask,)

    return _record(tape, out, (a,), backward)


def reshape(a, shape, tape=None):
    a = _as_tensor(a)
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError as err:
        raise DimensionException("cannot reshape {} to {}: {}".format(a.shape, shape, err))
    original = a.shape

    def backward(g):
        return (g.reshape(original),)

    return _record(tape, out, (a,), backward)


def flatten(a, tape=None):
    '''Collapses every axis but the first (batch) axis.'''
    a = _as_tensor(a)
    return reshape(a, (a.shape[0], -1), tape=tape)


def concat(tensors, tape=None):
    '''Joins 2-D tensors along the feature axis.'''
    tensors = tuple(_as_tensor(t) for t in tensors)
    if any(t.ndim != 2 for t in tensors) or len({t.shape[0] for t in tensors}) != 1:
        raise DimensionException("concat needs 2-D tensors with equal rows, got {}".format([t.shape for t in tensors]))

    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record(tape, out, tensors, backward)


def total(a, tape=None):
    a = _as_tensor(a)
    out = Tensor(a.data.sum())

    def backward(g):
        return (np.full(a.shape, float(g)),)

    return _record(tape, out, (a,), backward)


def conv(input, kernel, dims, tape=None):
    '''Valid, stride-1 cross-correlation.
    args:
        input: (N, L, Cin) for dims=1 or (N, H, W, Cin) for dims=2. A bare (L,) or
            (H, W) input is treated as one single-channel sample.
        kernel: (k, Cin, Cout) / (kh, kw, Cin, Cout), or a bare (k,) / (kh, kw) kernel.
        dims: 1 or 2.
    returns:
        Tensor of shape (N, L-k+1, Cout) / (N, H-kh+1, W-kw+1, Cout), or the bare
        output shape when both input and kernel were bare.
    '''
    if dims not in (1, 2):
        raise DimensionException("conv supports 1 or 2 spatial dims, got {}".format(dims))
    input, kernel = _as_tensor(input), _as_tensor(kernel)

    bare = input.ndim == dims and kernel.ndim == dims
    if bare:
        input = reshape(input, (1,) + input.shape + (1,), tape=tape)
        kernel = reshape(kernel, kernel.shape + (1, 1), tape=tape)

    if input.ndim != dims + 2 or kernel.ndim != dims + 2:
        raise DimensionException("conv{}d got input {} and kernel {}".format(dims, input.shape, kernel.shape))
    spatial = input.shape[1:1 + dims]
    window = kernel.shape[:dims]
    if any(k > s for k, s in zip(window, spatial)):
        raise DimensionException("kernel {} larger than input {}".format(window, spatial))
    if input.shape[-1] != kernel.shape[dims]:
        raise DimensionException("input has {} channels, kernel expects {}".format(input.shape[-1], kernel.shape[dims]))

    axes = tuple(range(1, 1 + dims))
    windows = sliding_window_view(input.data, window, axis=axes)
    out_spatial = windows.shape[1:1 + dims]
    if dims == 1:
        out = np.einsum('nlci,icd->nld', windows, kernel.data, optimize=True)
    else:
        out = np.einsum('nhwcij,ijcd->nhwd', windows, kernel.data, optimize=True)

    def backward(g):
        if dims == 1:
            g_kernel = np.einsum('nlci,nld->icd', windows, g, optimize=True)
            g_input = np.zeros(input.shape)
            for i in range(window[0]):
                g_input[:, i:i + out_spatial[0], :] += g @ kernel.data[i].T
        else:
            g_kernel = np.einsum('nhwcij,nhwd->ijcd', windows, g, optimize=True)
            g_input = np.zeros(input.shape)
            for i in range(window[0]):
                for j in range(window[1]):
                    g_input[:, i:i + out_spatial[0], j:j + out_spatial[1], :] += g @ kernel.data[i, j].T
        return g_input, g_kernel

    result = _record(tape, Tensor(out), (input, kernel), backward)
    if bare:
        result = reshape(result, out_spatial, tape=tape)
    return result


def softmax(logits):
    '''Probabilities along the last axis. Not taped.'''
    return Tensor(_softmax(_as_tensor(logits).data, axis=-1))


def _batched_targets(logits, target):
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    if z.ndim != 2:
        raise DimensionException("logits must be (C,) or (N, C), got {}".format(logits.shape))
    t = np.atleast_1d(np.asarray(target))
    if t.shape != (z.shape[0],) or not np.issubdtype(t.dtype, np.integer):
        raise DimensionException("need one integer target per row, got {}".format(t.shape))
    if np.any(t < 0) or np.any(t >= z.shape[1]):
        raise TargetIndexException("target outside [0, {})".format(z.shape[1]))
    return single, z, t


def softmax_cross_entropy(logits, target, weights=None, reduction='mean', tape=None):
    '''Cross-entropy of softmax(logits) against integer targets.
    args:
        logits: (C,) with an int target, or (N, C) with N int targets.
        weights: optional per-row weights.
        reduction: "mean" divides the weighted sum by N, "sum" does not.
    returns:
        scalar Tensor. d(loss)/d(logits) = w * (softmax(logits) - onehot(target)) / N.
    '''
    logits = _as_tensor(logits)
    single, z, t = _batched_targets(logits, target)
    n = z.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(n)
    denom = n if reduction == 'mean' else 1.0

    lse = logsumexp(z, axis=1)
    per_row = lse - z[np.arange(n), t]
    out = Tensor(np.sum(w * per_row) / denom)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), t] -= 1.0
        grad = float(g) * p * (w / denom)[:, None]
        return (grad.reshape(logits.shape) if single else grad,)

    return _record(tape, out, (logits,), backward)


def binary_cross_entropy_with_logits(logits, target, weights=None, tape=None):
    '''Mean weighted binary cross-entropy of sigmoid(logits) against 0/1 targets.'''
    logits = _as_tensor(logits)
    z = logits.data.reshape(-1)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if y.shape != z.shape:
        raise DimensionException("{} logits for {} targets".format(z.shape[0], y.shape[0]))
    w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    n = z.shape[0]

    out = Tensor(np.sum(w * (np.logaddexp(0.0, z) - y * z)) / n)

    def backward(g):
        return ((float(g) * w * (expit(z) - y) / n).reshape(logits.shape),)

    return _record(tape, out, (logits,), backward)


def backward(loss):
    '''Accumulates gradients for every taped tensor that led to `loss`, then clears the tape.'''
    if loss.data.size != 1 or loss.ndim > 1:
        raise DimensionException("backward needs a scalar loss, got shape {}".format(loss.shape))
    tape = loss._tape
    if tape is None:
        if not loss.requires_grad:
            raise StateException("loss was not produced under a gradient tape")
        loss.grad = np.ones(loss.shape)
        return

    loss.grad = np.ones(loss.shape)
    for node in reversed(tape.nodes):
        g = node.result.grad
        if g is None:
            continue
        for operand, operand_grad in zip(node.operands, node.backward(g)):
            if not operand.requires_grad or operand_grad is None:
                continue
            if operand.grad is None:
                operand.grad = np.array(operand_grad, dtype=np.float64)
            else:
                operand.grad = operand.grad + operand_grad
    tape.clear()


def sgd_step(params, lr, momentum=0.0):
    '''p <- p - lr * v with v <- momentum * v + grad. Gradients are cleared afterwards.'''
    for p in params:
        if p.grad is None:
            raise StateException("parameter of shape {} has no gradient".format(p.shape))
    for p in params:
        p.velocity = p.grad if p.velocity is None else momentum * p.velocity + p.grad
        p.data = p.data - lr * p.velocity
        p.grad = None
