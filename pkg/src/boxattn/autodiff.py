"""Dense float64 tensors with taped reverse-mode differentiation.

Deliberately small: just the operations needed to build and train the
attention stack in this package, each with a hand-written backward rule
that is checked against central finite differences (see
:func:`gradient_check` and the test suite).

Tensors are value-like and safe to hand between threads; a computation
graph, however, is built and consumed by a single thread. Everything is
float64 so that gradient checks can run at tight tolerances.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

NEG_INF = float("-inf")

# When enabled, every op output is checked for NaN/Inf. Off by default to
# keep training loops cheap; the test suite switches it on.
_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """A dense float64 array plus an optional gradient and tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named trainable tensor carrying Adam moment state."""

    __slots__ = ("name", "adam_m", "adam_v", "adam_step_count")

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.adam_m: np.ndarray | None = None
        self.adam_v: np.ndarray | None = None
        self.adam_step_count = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Build an op-output tensor. `backward(g)` returns [(parent, grad), ...]."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward operation")
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return make_op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        return [(a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape))]

    return make_op(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return [(a, ga), (b, gb)]

    return make_op(out_data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    p = float(exponent)
    out_data = a.data ** p

    def backward(g):
        return [(a, g * p * a.data ** (p - 1.0))]

    return make_op(out_data, (a,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    inv_sqrt2 = 0.7071067811865476
    e = erf(x.data * inv_sqrt2)
    out_data = 0.5 * x.data * (1.0 + e)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * 0.3989422804014327
        return [(x, g * (0.5 * (1.0 + e) + x.data * pdf))]

    return make_op(out_data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. p=0 is an exact no-op (returns x itself)."""
    if p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError(f"dropout probability must be < 1, got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out_data = x.data * mask

    def backward(g):
        return [(x, g * mask)]

    return make_op(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = x.data.reshape(shape)

    def backward(g):
        return [(x, g.reshape(x.shape))]

    return make_op(out_data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        return [(x, g.transpose(inverse))]

    return make_op(out_data, (x,), backward)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out_data = np.ascontiguousarray(x.data.swapaxes(a, b))

    def backward(g):
        return [(x, g.swapaxes(a, b))]

    return make_op(out_data, (x,), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = (slice(None),) * (axis % x.ndim) + (slice(start, stop),)
    out_data = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return [(x, full)]

    return make_op(out_data, (x,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = (slice(None),) * (axis % g.ndim) + (slice(lo, hi),)
            grads.append((t, g[index]))
        return grads

    return make_op(out_data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    axes = _normalize_axes(axis, x.ndim)

    def backward(g):
        if not keepdims and axes is not None:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return [(x, np.broadcast_to(g, x.shape))]

    return make_op(np.asarray(out_data), (x,), backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with batched leading dimensions."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast_matmul(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast_matmul(a.data.swapaxes(-1, -2) @ g, b.shape)
        return [(a, ga), (b, gb)]

    return make_op(out_data, (a, b), backward)


def _unbroadcast_matmul(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i in range(len(shape) - 2):
        if shape[i] == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; backward scatter-adds."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding ids out of range for table of {table.shape[0]} rows")
    out_data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return [(table, gt)]

    return make_op(out_data, (table,), backward)


# ---------------------------------------------------------------------------
# attention / normalization / loss primitives


def masked_softmax(logits: Tensor, bias) -> Tensor:
    """Row-wise softmax of (logits + bias) over the last axis.

    `bias` entries are finite or -inf; -inf entries are excluded from the
    max-subtraction and produce exactly-zero attention. A row whose entries
    are all -inf yields an all-zero row rather than NaN.
    """
    bias = _wrap(bias)
    try:
        z = logits.data + bias.data
    except ValueError:
        raise ValueError(
            f"masked_softmax: logits shape {logits.shape} does not broadcast "
            f"with bias shape {bias.shape}") from None
    finite = np.isfinite(z)
    m = np.max(np.where(finite, z, NEG_INF), axis=-1, keepdims=True)
    e = np.where(finite, np.exp(z - np.where(np.isfinite(m), m, 0.0)), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    y = e / np.where(s == 0.0, 1.0, s)

    def backward(g):
        dz = y * (g - (g * y).sum(axis=-1, keepdims=True))
        grads = [(logits, _unbroadcast(dz, logits.shape))]
        if bias.requires_grad:
            grads.append((bias, _unbroadcast(dz, bias.shape)))
        return grads

    return make_op(y, (logits, bias), backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean unit-variance normalization over the last axis, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/shift shapes {gain.shape}/{shift.shape} "
            f"do not match last axis size {d}")
    if eps <= 0.0 and d == 1:
        raise ValueError("layer_norm: singleton axis with eps<=0 would divide by zero")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + shift.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        dgain = (flat * xhat.reshape(-1, d)).sum(axis=0)
        dshift = flat.sum(axis=0)
        return [(x, dx), (gain, dgain), (shift, dshift)]

    return make_op(out_data, (x, gain, shift), backward)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy on raw logits (numerically stable)."""
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    out_data = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        return [(logits, g * (expit(z) - y))]

    return make_op(out_data, (logits,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate .grad of every reachable requires_grad tensor with dLoss/d(.).

    Repeated calls without zeroing accumulate. `loss` must be scalar.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

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
            if id(p) not in seen:
                stack.append((p, False))

    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.array(g, copy=True)
        else:
            node.grad = node.grad + g
        if node._backward is not None:
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                acc = flows.get(id(parent))
                flows[id(parent)] = pg if acc is None else acc + pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# finite-difference verification


def gradient_check(loss_fn, params, h: float = 1e-5):
    """Compare analytic gradients of `loss_fn()` against central differences.

    `loss_fn` must rebuild the graph on each call and be deterministic in
    the parameter values. Returns (worst_relative_error, {name: error}).
    The relative error uses a unit floor, |a-n| / max(1, |a|, |n|), so tiny
    gradients are compared absolutely.
    """
    zero_grads(params)
    backward(loss_fn())
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for p in params}

    worst = 0.0
    report = {}
    for p in params:
        num = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = float(loss_fn().data)
            p.data[idx] = orig - h
            down = float(loss_fn().data)
            p.data[idx] = orig
            num[idx] = (up - down) / (2.0 * h)
        an = analytic[id(p)]
        denom = np.maximum(1.0, np.maximum(np.abs(an), np.abs(num)))
        err = float(np.max(np.abs(an - num) / denom)) if num.size else 0.0
        name = getattr(p, "name", repr(p))
        report[name] = err
        worst = max(worst, err)
    return worst, report
