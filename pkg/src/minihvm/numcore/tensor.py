"""Dense float tensors with reverse-mode automatic differentiation.

Design notes:
  * data lives in numpy arrays (float64 by default, float32 allowed);
    every op validates that forward results are finite and raises
    NonFiniteError otherwise instead of letting NaN/Inf propagate.
  * tensors are immutable once created; ops build a fresh node and a
    backward closure, and Tensor.backward() runs the tape in reverse
    topological order.
  * none of the ops in this module have subgradient ties on the paths
    we use them on: gelu and softmax are smooth, layer_norm is smooth
    for eps > 0, and the gather/scatter index sets are fixed integers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def _check_finite(data: np.ndarray, opname: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{opname}'")


class Tensor:
    """A numpy-backed tensor node in the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op="leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self._op = _op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of self w.r.t. every upstream tensor."""
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        # grad arrays are never mutated in place, so sharing views is safe
        self.grad = grad if self.grad is None else self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e
    out = Tensor(data, _parents=(a, b), _op="add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e
    out = Tensor(data, _parents=(a, b), _op="sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
    out = Tensor(data, _parents=(a, b), _op="mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


# -- matmul --------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported operand ranks:
      * (..., m, k) @ (k, n)        -- shared weight matrix on the right
      * (..., m, k) @ (..., k, n)   -- batched, identical leading dims
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b), _op="matmul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(gb)

    out._backward = backward
    return out


# -- shape manipulation ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from e
    out = Tensor(data, _parents=(a,), _op="reshape")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    out._backward = backward
    return out


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for rank {a.ndim}")
    inv = tuple(int(i) for i in np.argsort(axes))
    out = Tensor(a.data.transpose(axes), _parents=(a,), _op="transpose")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    out._backward = backward
    return out


# -- gather / scatter over the token axis ----------------------------------------


def _check_token_indices(idx: np.ndarray, n: int, op: str) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"{op}: index out of range for {n} rows")
    return idx.astype(np.intp)


def gather_rows(a, idx) -> Tensor:
    """Select rows along the second-to-last axis.

    a: (N, D) with idx (K,), or (B, N, D) with idx (K,) or per-sample (B, K).
    Backward scatter-adds, so duplicate indices are handled correctly.
    """
    a = _as_tensor(a)
    if a.ndim not in (2, 3):
        raise ShapeError("gather_rows expects rank 2 or 3 input")
    n = a.shape[-2]
    idx = _check_token_indices(idx, n, "gather_rows")
    if idx.ndim == 1:
        data = np.take(a.data, idx, axis=-2)
    elif idx.ndim == 2 and a.ndim == 3:
        if idx.shape[0] != a.shape[0]:
            raise ShapeError(f"gather_rows: batch {a.shape[0]} vs idx {idx.shape[0]}")
        data = np.take_along_axis(a.data, idx[:, :, None], axis=1)
    else:
        raise ShapeError(f"gather_rows: idx rank {idx.ndim} with input rank {a.ndim}")
    out = Tensor(data, _parents=(a,), _op="gather_rows")

    def backward(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        if idx.ndim == 1:
            if a.ndim == 2:
                np.add.at(ga, idx, g)
            else:
                np.add.at(ga, (slice(None), idx), g)
        else:
            bidx = np.arange(a.shape[0])[:, None]
            np.add.at(ga, (bidx, idx), g)
        a._accumulate(ga)

    out._backward = backward
    return out


def scatter_rows(values, idx, n_rows: int) -> Tensor:
    """Place rows into a zero tensor of n_rows along the token axis.

    values: (K, D) with idx (K,), or (B, K, D) with idx (K,) or (B, K).
    Indices must be unique per sample (mask-plan index sets are).
    """
    v = _as_tensor(values)
    if v.ndim not in (2, 3):
        raise ShapeError("scatter_rows expects rank 2 or 3 values")
    idx = _check_token_indices(idx, n_rows, "scatter_rows")
    k = v.shape[-2]
    if idx.shape[-1] != k:
        raise ShapeError(f"scatter_rows: {k} rows vs {idx.shape[-1]} indices")
    shape = v.shape[:-2] + (n_rows, v.shape[-1])
    data = np.zeros(shape, dtype=v.data.dtype)
    if idx.ndim == 1:
        if len(np.unique(idx)) != idx.size:
            raise ShapeError("scatter_rows: duplicate indices")
        data[..., idx, :] = v.data
    elif idx.ndim == 2 and v.ndim == 3:
        if idx.shape[0] != v.shape[0]:
            raise ShapeError(f"scatter_rows: batch {v.shape[0]} vs idx {idx.shape[0]}")
        bidx = np.arange(v.shape[0])[:, None]
        data[bidx, idx] = v.data
    else:
        raise ShapeError(f"scatter_rows: idx rank {idx.ndim} with values rank {v.ndim}")
    out = Tensor(data, _parents=(v,), _op="scatter_rows")

    def backward(g):
        if not v.requires_grad:
            return
        if idx.ndim == 1:
            gv = np.take(g, idx, axis=-2)
        else:
            gv = np.take_along_axis(g, idx[:, :, None], axis=1)
        v._accumulate(np.ascontiguousarray(gv))

    out._backward = backward
    return out


# -- reductions ------------------------------------------------------------------


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(a % ndim for a in axis)
    if len(set(axis)) != len(axis):
        raise ShapeError(f"duplicate reduction axes {axis}")
    return axis


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _op="sum")

    def backward(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    out._backward = backward
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in axis]))
    if count == 0:
        raise ShapeError("mean over empty axis")
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), _parents=(a,), _op="mean")

    def backward(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        a._accumulate(np.broadcast_to(g, a.shape) / count)

    out._backward = backward
    return out


# -- normalization / activations ---------------------------------------------------


def layer_norm(a, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = _as_tensor(a)
    if a.shape[-1] < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat, _parents=(a,), _op="layer_norm")

    def backward(g):
        if not a.requires_grad:
            return
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        a._accumulate((g - gm - xhat * gx) * inv)

    out._backward = backward
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, _parents=(a,), _op="softmax")

    def backward(g):
        if not a.requires_grad:
            return
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate((g - dot) * s)

    out._backward = backward
    return out


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU; smooth everywhere, no subgradient choices."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = Tensor(a.data * cdf, _parents=(a,), _op="gelu")

    def backward(g):
        if not a.requires_grad:
            return
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        a._accumulate(g * (cdf + a.data * pdf))

    out._backward = backward
    return out


# -- composite ops -------------------------------------------------------------------


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention over the last two axes (no causal mask).

    q, k, v: (..., S, d) with identical leading dims. Fused forward/backward:
    the S x S weight matrices dominate memory traffic, so this op keeps a
    single attention-weight buffer instead of materializing every composite
    intermediate. Gradients are the standard softmax(QK'/sqrt(d))V formulas.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    d = q.shape[-1]
    if q.ndim < 2 or k.shape[-1] != d or v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"attention: q{q.shape} k{k.shape} v{v.shape}")
    if q.shape[:-2] != k.shape[:-2] or q.shape[:-2] != v.shape[:-2]:
        raise ShapeError(f"attention: batch dims differ q{q.shape} k{k.shape} v{v.shape}")
    inv = 1.0 / np.sqrt(d)
    kt = np.swapaxes(k.data, -1, -2)
    weights = (q.data * inv) @ kt
    weights -= weights.max(axis=-1, keepdims=True)
    np.exp(weights, out=weights)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = Tensor(weights @ v.data, _parents=(q, k, v), _op="attention")

    def backward(g):
        if v.requires_grad:
            v._accumulate(np.swapaxes(weights, -1, -2) @ g)
        if q.requires_grad or k.requires_grad:
            gw = g @ np.swapaxes(v.data, -1, -2)
            gw -= (gw * weights).sum(axis=-1, keepdims=True)
            gw *= weights
            if q.requires_grad:
                q._accumulate((gw @ k.data) * inv)
            if k.requires_grad:
                k._accumulate(np.swapaxes(gw, -1, -2) @ (q.data * inv))

    out._backward = backward
    return out


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    logits: (B, C); labels: (B,) ints in [0, C).
    """
    lg = _as_tensor(logits)
    if lg.ndim != 2:
        raise ShapeError("cross_entropy expects (B, C) logits")
    y = np.asarray(labels)
    if y.shape != (lg.shape[0],):
        raise ShapeError(f"cross_entropy: {lg.shape[0]} rows vs labels {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= lg.shape[1]):
        raise ShapeError("cross_entropy: label out of range")
    y = y.astype(np.intp)
    b = lg.shape[0]
    shifted = lg.data - lg.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    out = Tensor(-logp[np.arange(b), y].mean(), _parents=(lg,), _op="cross_entropy")

    def backward(g):
        if not lg.requires_grad:
            return
        p = np.exp(logp)
        p[np.arange(b), y] -= 1.0
        lg._accumulate(g * p / b)

    out._backward = backward
    return out
