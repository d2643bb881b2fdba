"""Reverse-mode differentiation over small float64 numpy arrays.

Operations record themselves on the active :class:`Tape` (if any). With no
tape active they just compute values, which is what inference uses.
"""

from __future__ import annotations

import math
import threading
from typing import Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64
CHECK_FINITE = True

_local = threading.local()


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


# Values are checked where they enter (as_tensor) and at scalar losses; a
# NaN/Inf produced in between propagates to the loss and is caught there.
def _check(out: np.ndarray, op: str) -> np.ndarray:
    if CHECK_FINITE and not np.isfinite(out).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    return out


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == DTYPE else np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    # operator sugar so the same model code runs on Tensors and on ndarrays
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class Tape:
    """Records the nodes of one forward pass in creation order."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}
        self.store = None

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def watch(self, store) -> dict[str, Tensor]:
        """Wrap every array of a ParamStore as a differentiable leaf."""
        if self.store is not None:
            raise RuntimeError("a tape watches a single parameter store")
        self.store = store
        self.params = {name: Tensor(arr, requires_grad=True, name=name)
                       for name, arr in store.items()}
        return self.params


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def constants(store) -> dict[str, Tensor]:
    return {name: Tensor(arr, name=name) for name, arr in store.items()}


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(_check(np.asarray(x, dtype=DTYPE), "input"))


def _node(out, parents, backward_fn, op):
    tape = active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return Tensor(out)
    t = Tensor(out, parents, backward_fn, requires_grad=True)
    tape.nodes.append(t)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if t.parents else g.copy()
    elif t.parents or t.backward_fn:
        t.grad = t.grad + g
    else:
        t.grad += g


def custom_op(out: np.ndarray, parents: Sequence, backward_fn, name: str = "custom") -> Tensor:
    """Record a fused operation whose backward is written by hand.

    ``backward_fn(g)`` must call :func:`accumulate` once per parent that
    needs a gradient.
    """
    return _node(out, tuple(parents), backward_fn, name)


def accumulate(t: Tensor, g: np.ndarray) -> None:
    _acc(t, g)


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))
    return _node(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))
    return _node(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e

    def bw(g):
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))
    return _node(out, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _acc(a, g * c)
    return _node(a.data * c, (a,), bw, "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data @ b.data
    except ValueError as e:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from e

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1:
            _acc(a, g @ bd.T if bd.ndim == 2 else g @ np.swapaxes(bd, -1, -2))
            _acc(b, np.outer(ad, g) if bd.ndim == 2 else ad[:, None] * g[..., None, :])
            return
        if bd.ndim == 1:
            _acc(a, _unbroadcast(g[..., None] * bd, ad.shape))
            _acc(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g[..., None], bd.shape + (1,)).reshape(bd.shape))
            return
        _acc(a, _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
        _acc(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))
    return _node(out, (a, b), bw, "matmul")


def linear(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` for x of shape (..., d_in) and a 2-D weight."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    try:
        out = x.data @ weight.data + bias.data
    except ValueError as e:
        raise ShapeError(f"linear: {x.shape} @ {weight.shape} + {bias.shape}") from e

    def bw(g):
        xd = x.data
        if xd.ndim == 1:
            _acc(x, weight.data @ g)
            _acc(weight, np.outer(xd, g))
            _acc(bias, g)
        else:
            g2 = g.reshape(-1, g.shape[-1])
            _acc(x, g @ weight.data.T)
            _acc(weight, xd.reshape(-1, xd.shape[-1]).T @ g2)
            _acc(bias, g2.sum(axis=0))
    return _node(out, (x, weight, bias), bw, "linear")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        _acc(a, g * (1.0 - out * out))
    return _node(out, (a,), bw, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        _acc(a, g * out * (1.0 - out))
    return _node(out, (a,), bw, "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _acc(a, g * mask)
    return _node(a.data * mask, (a,), bw, "relu")


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact (erf) GELU, as in BERT."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bw(g):
        _acc(a, g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)))
    return _node(x * cdf, (a,), bw, "gelu")


def abs_(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _acc(a, g * np.sign(a.data))
    return _node(np.abs(a.data), (a,), bw, "abs")


def sum_(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _acc(a, np.broadcast_to(g, a.shape).copy())
    return _node(_check(np.asarray(a.data.sum()), "sum"), (a,), bw, "sum")


def l1_distance(a, b) -> Tensor:
    return sum_(abs_(sub(a, b)))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from e

    def bw(g):
        _acc(a, g.reshape(a.shape))
    return _node(out, (a,), bw, "reshape")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def bw(g):
        _acc(a, g.transpose(inverse))
    return _node(a.data.transpose(axes), (a,), bw, "transpose")


def index(a, key) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as e:
        raise ShapeError(f"index {key!r} out of range for {a.shape}") from e

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _acc(a, full)
    return _node(out, (a,), bw, "index")


slice_ = index


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[t.shape for t in ts]}") from e
    bounds = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=axis)):
            _acc(t, piece)
    return _node(out, tuple(ts), bw, "concat")


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"token id out of range for table of {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _acc(table, full)
    return _node(table.data[ids], (table,), bw, "embedding_lookup")


# ---------------------------------------------------------------------------
# normalisation and losses


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _acc(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _node(out, (a,), bw, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis, then apply ``gamma * xhat + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: affine {gamma.shape}/{beta.shape} for input {x.shape}")
    inv_d = 1.0 / x.shape[-1]
    xc = x.data - x.data.sum(axis=-1, keepdims=True) * inv_d
    inv = 1.0 / np.sqrt((xc * xc).sum(axis=-1, keepdims=True) * inv_d + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        _acc(gamma, _unbroadcast(g * xhat, gamma.shape))
        _acc(beta, _unbroadcast(g, beta.shape))
        dxhat = g * gamma.data
        _acc(x, inv * (dxhat - dxhat.sum(axis=-1, keepdims=True) * inv_d
                       - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) * inv_d))
    return _node(out, (x, gamma, beta), bw, "layer_norm")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label: int) -> Tensor:
    """Negative log-probability of ``label`` under softmax(logits), logits of shape (2,)."""
    logits = as_tensor(logits)
    if logits.shape != (2,):
        raise ShapeError(f"cross_entropy expects 2-class logits, got {logits.shape}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    logp = log_softmax(logits.data)
    p = np.exp(logp)

    def bw(g):
        d = p.copy()
        d[label] -= 1.0
        _acc(logits, g * d)
    return _node(_check(np.asarray(-logp[label]), "cross_entropy"), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(param) for every parameter the tape watches.

    Returns a ParamStore laid out like the watched store; parameters the loss
    does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if tape.store is None:
        raise RuntimeError("tape is not watching a parameter store")
    grads = tape.store.zeros_like()
    for name, leaf in tape.params.items():
        leaf.grad = grads[name]
    for node in tape.nodes:
        node.grad = None
    if not loss.requires_grad:
        return grads
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None:
            node.backward_fn(node.grad)
    for leaf in tape.params.values():
        leaf.grad = None
    return grads
