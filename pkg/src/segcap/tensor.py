"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient slot. Operations
build a dynamic graph: each result remembers its parents and a closure
that routes the output gradient back to them. `backward()` on a scalar
walks the graph once in reverse topological order.

Parameters are float32 by default for training; gradient checks run the
same code in float64. Ops never mutate their inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ContractError, DegenerateBatchError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
_NEG_BIG = -1e30  # finite mask bias; exp() underflows to exactly 0.0


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Convenience operators; heavy lifting lives in the module functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, dtype=np.float32) -> Tensor:
    """Wrap `data` as a trainable leaf tensor."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents, backward) -> Tensor:
    """Build an op result: gradient tracking only if some parent needs it."""
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor reachable from `loss`.

    `loss` must be scalar. Gradients accumulate, so callers zero them
    between steps (see `zero_grads`).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    # Iterative topological sort; graphs are deep enough to overflow recursion.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in seen and (p.requires_grad or p._parents):
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), back)


def power(a, exponent: float) -> Tensor:
    """Elementwise a**exponent for a constant exponent."""
    a = _as_tensor(a)
    out = a.data ** exponent

    def back(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out, (a,), back)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching over leading axes.

    Gradients: a.grad += g @ b^T and b.grad += a^T @ g, summed over any
    broadcast leading axes.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), back)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def back(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(out, (a,), back)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(out, (a,), back)


def rows(table, ids) -> Tensor:
    """Gather rows of a 2-D table by integer index array of any shape."""
    table = _as_tensor(table)
    idx = np.asarray(ids)
    out = np.take(table.data, idx, axis=0)

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.ravel(), g.reshape(-1, table.data.shape[1]))
        _accumulate(table, gt)

    return _make(out, (table,), back)


def narrow(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]

    def back(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        _accumulate(a, ga)

    return _make(out, (a,), back)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax along `axis`; slices sum to 1 for finite input."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _make(out, (a,), back)


def gelu(a) -> Tensor:
    """x * Phi(x) with the exact normal CDF (erf form)."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf

    def back(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        _accumulate(a, g * (cdf + a.data * pdf))

    return _make(out, (a,), back)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def back(g):
        _accumulate(a, g * out * (1.0 - out))

    return _make(out, (a,), back)


def layer_norm(x, gain, bias, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize each slice along `axis` to zero mean / unit variance, then
    apply the affine (gain, bias). Population variance; eps guards constant
    slices."""
    x = _as_tensor(x)
    if x.data.shape[axis] < 1:
        raise ShapeError("layer_norm needs a non-empty normalized axis")
    mu = mean(x, axis=axis, keepdims=True)
    centered = x - mu
    var = mean(mul(centered, centered), axis=axis, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def dropout(a, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: scale survivors by 1/(1-p) at train time, identity
    at evaluation."""
    if not train or p <= 0.0:
        return _as_tensor(a)
    a = _as_tensor(a)
    if rng is None:
        raise ContractError("dropout at train time needs an rng")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    out = a.data * keep

    def back(g):
        _accumulate(a, g * keep)

    return _make(out, (a,), back)


def attention_bias(mask: np.ndarray, dtype) -> np.ndarray:
    """Additive bias from a boolean keep-mask: 0 where visible, -1e30 where
    hidden. Finite so that max-subtraction in softmax stays well defined."""
    return np.where(mask, 0.0, _NEG_BIG).astype(dtype)


def masked_cross_entropy(logits, targets, loss_mask) -> Tensor:
    """Mean negative log-likelihood over positions where `loss_mask` is true.

    logits: [..., V]; targets and loss_mask share the leading shape. The
    gradient at masked-out positions is exactly zero.
    """
    logits = _as_tensor(logits)
    vocab = logits.data.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tgt = np.asarray(targets).reshape(-1)
    msk = np.asarray(loss_mask).reshape(-1).astype(bool)
    if tgt.shape[0] != flat.shape[0] or msk.shape[0] != flat.shape[0]:
        raise ShapeError("targets/mask do not match logits leading shape")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
        raise ContractError("target id out of vocabulary range")
    count = int(msk.sum())
    if count == 0:
        raise DegenerateBatchError("loss mask selects no positions")

    shifted = flat - flat.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    nll = lse - shifted[np.arange(flat.shape[0]), tgt]
    out = np.asarray((nll * msk).sum() / count, dtype=logits.data.dtype)

    def back(g):
        prob = np.exp(shifted - lse[:, None])
        prob[np.arange(flat.shape[0]), tgt] -= 1.0
        prob *= (msk.astype(flat.dtype) * (float(g) / count))[:, None]
        _accumulate(logits, prob.reshape(logits.data.shape))

    return _make(out, (logits,), back)


def binary_cross_entropy_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy from raw logits, numerically stable."""
    logits = _as_tensor(logits)
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=z.dtype).reshape(-1)
    if z.shape != y.shape:
        raise ShapeError("labels do not match logits shape")
    if z.size == 0:
        raise DegenerateBatchError("empty batch for binary cross-entropy")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean(), dtype=z.dtype)

    def back(g):
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                     np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        _accumulate(logits, ((p - y) * (float(g) / z.size)).reshape(logits.data.shape))

    return _make(out, (logits,), back)
