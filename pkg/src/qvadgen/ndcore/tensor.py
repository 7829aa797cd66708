"""Dense tensor values with a reverse-mode differentiation tape.

Values are numpy arrays; every op records a backward rule that accumulates
into its parents' grad buffers. backward() walks the tape once in reverse
topological order, so shared subexpressions sum their contributions.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_DTYPE = np.float64
_GRAD_ENABLED = True
_ids = itertools.count()


def set_default_dtype(name: str) -> None:
    global _DTYPE
    if name not in ("float64", "float32"):
        raise ValueError("dtype must be float64 or float32")
    _DTYPE = np.float64 if name == "float64" else np.float32


def default_dtype():
    return _DTYPE


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / frozen passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tid", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.tid = next(_ids)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        # iterative post-order DFS; tapes from long decodes exceed the
        # recursion limit
        topo, seen, stack = [], set(), [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an op; use mul + reciprocal constants")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Non-differentiable tensor in the current default dtype."""
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED:
        tracked = tuple(p for p in parents if p.requires_grad)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to shape, undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bw)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(g * s)

    return _make(a.data * s, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out_data, (a, b), bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(g.T)

    return _make(a.data.T, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        a._accum(g * (1.0 - y * y))

    return _make(y, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # evaluate exp on the non-positive branch only so large |x| cannot overflow
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        a._accum(g * y * (1.0 - y))

    return _make(y, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    y = np.maximum(a.data, 0.0)

    def bw(g):
        a._accum(g * (a.data > 0.0))

    return _make(y, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def bw(g):
        a._accum(g * y)

    return _make(y, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), bw)


def concat(parts, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accum(g[tuple(sl)])

    return _make(out_data, tuple(parts), bw)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a._accum(full)

    return _make(a.data[start:stop], (a,), bw)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accum(full)

    return _make(a.data[:, start:stop], (a,), bw)


def gather_rows(a, ids) -> Tensor:
    """Row lookup (embedding); duplicate ids accumulate their gradients."""
    a = as_tensor(a)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("gather_rows expects a flat id list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"gather_rows id out of range for {a.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)

    return _make(a.data[idx], (a,), bw)


def pick(a, row: int, col: int) -> Tensor:
    """Single entry as a scalar tensor."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[row, col] = g
        a._accum(full)

    return _make(np.asarray(a.data[row, col]), (a,), bw)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), bw)


def softmax(a) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accum(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (a,), bw)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def bw(g):
        a._accum(g - sm * g.sum(axis=-1, keepdims=True))

    return _make(out_data, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization over the last axis."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    d = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out_data = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if a.requires_grad:
            gx = g * gamma.data
            a._accum(
                inv_std
                * (gx - gx.mean(axis=-1, keepdims=True)
                   - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            )

    return _make(out_data, (a, gamma, beta), bw)


def softmax_cross_entropy(logits, targets, pad_mask=None):
    """Mean negative log-likelihood of the target ids per row.

    Returns (loss tensor, probability matrix as a plain array). pad_mask, when
    given, is a per-row keep flag; masked rows contribute neither loss nor
    gradient and the mean runs over kept rows only.
    """
    logits = as_tensor(logits)
    n, v = logits.shape
    idx = np.asarray(targets, dtype=np.intp)
    if idx.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ValueError(f"target id out of range for vocab size {v}")
    keep = np.ones(n, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    if keep.shape != (n,):
        raise ValueError(f"pad_mask shape {keep.shape} does not match {n} rows")
    n_eff = int(keep.sum())
    if n_eff == 0:
        raise ValueError("all rows are masked out")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    logp = shifted - np.log(e.sum(axis=-1, keepdims=True))
    loss_val = -(logp[np.arange(n), idx] * keep).sum() / n_eff

    def bw(g):
        d = probs.copy()
        d[np.arange(n), idx] -= 1.0
        d *= (keep / n_eff)[:, None]
        logits._accum(d * float(g))

    return _make(np.asarray(loss_val), (logits,), bw), probs
