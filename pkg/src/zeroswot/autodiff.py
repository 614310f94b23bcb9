"""Float64 arrays with reverse-mode automatic differentiation.

Every operation records its parents and a closure that maps the upstream
gradient to parent gradients; ``Tensor.backward`` replays the tape in
reverse topological order.  All values are dense float64.  Values are
finite unless an operation documents infinities (the CTC recursion and
log-domain reductions work with -inf as an additive identity).
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor", "Parameter", "ShapeMismatch", "no_grad", "tensor",
    "is_grad_enabled",
    "add", "sub", "mul", "div", "matmul", "concat", "gather_rows",
    "take_cols", "reshape", "permute", "transpose", "exp", "log", "tanh",
    "erf", "relu", "gelu", "power", "sum_", "mean", "logsumexp",
    "logaddexp", "softmax", "log_softmax", "layer_norm", "mean_pool",
]


class ShapeMismatch(Exception):
    """Operand shapes are incompatible for the requested operation."""


_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class no_grad:
    """Context manager that disables tape recording (evaluation paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    # ---- convenience ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- autodiff -------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every
        reachable leaf with ``requires_grad``.  ``grad`` seeds the upstream
        gradient (defaults to ones, i.e. a scalar seed of 1.0)."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else _as_array(grad)

        # Iterative post-order DFS over the recorded tape.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ---- operators ------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, idx):
        data = self.data[idx]
        shape = self.data.shape

        def bw(g):
            z = np.zeros(shape)
            z[idx] = g
            return (z,)

        return _make(data, (self,), bw)

    @property
    def T(self):
        return transpose(self)


class Parameter:
    """A named leaf tensor; ``frozen`` parameters take no gradient and are
    never updated by the optimizer."""

    __slots__ = ("name", "tensor", "frozen")

    def __init__(self, name: str, data, frozen: bool = False):
        self.name = name
        self.tensor = Tensor(data, requires_grad=not frozen)
        self.frozen = frozen

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value) -> None:
        self.tensor.data = _as_array(value)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def freeze(self) -> None:
        self.frozen = True
        self.tensor.requires_grad = False
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, frozen={self.frozen})"


# ---- op plumbing --------------------------------------------------------

def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t = Tensor(data, requires_grad=True)
        t._parents = tuple(parents)
        t._backward = backward
        return t
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- arithmetic ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data
    sa, sb = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data
    sa, sb = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data
    sa, sb = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)

    return _make(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data / b.data
    sa, sb = a.data.shape, b.data.shape

    def bw(g):
        ga = _unbroadcast(g / b.data, sa)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), sb)
        return ga, gb

    return _make(data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}") from e
    sa, sb = a.data.shape, b.data.shape

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    return _make(data, (a, b), bw)


def power(a, k: float) -> Tensor:
    a = _coerce(a)
    data = a.data ** k

    def bw(g):
        return (g * k * a.data ** (k - 1),)

    return _make(data, (a,), bw)


# ---- shape ops ----------------------------------------------------------

def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tuple(ts), bw)


def gather_rows(a, idx) -> Tensor:
    """Select rows ``a[idx]`` (embedding lookup); duplicate indices
    accumulate gradient."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]
    shape = a.data.shape

    def bw(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        return (z,)

    return _make(data, (a,), bw)


def take_cols(a, idx) -> Tensor:
    """Select columns ``a[:, idx]``; duplicate indices accumulate gradient."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[:, idx]
    shape = a.data.shape

    def bw(g):
        z = np.zeros(shape)
        np.add.at(z, (slice(None), idx), g)
        return (z,)

    return _make(data, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    old = a.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bw)


def permute(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bw)


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2-D, got {a.data.shape}")
    return permute(a, (1, 0))


# ---- elementwise nonlinearities -----------------------------------------

def exp(a) -> Tensor:
    a = _coerce(a)
    data = np.exp(a.data)

    def bw(g):
        return (g * data,)

    return _make(data, (a,), bw)


def log(a) -> Tensor:
    a = _coerce(a)
    data = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return _make(data, (a,), bw)


def tanh(a) -> Tensor:
    a = _coerce(a)
    data = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), bw)


def erf(a) -> Tensor:
    a = _coerce(a)
    data = _erf(a.data)
    two_over_sqrt_pi = 2.0 / np.sqrt(np.pi)

    def bw(g):
        return (g * two_over_sqrt_pi * np.exp(-a.data * a.data),)

    return _make(data, (a,), bw)


def relu(a) -> Tensor:
    a = _coerce(a)
    data = np.maximum(a.data, 0.0)

    def bw(g):
        return (g * (a.data > 0.0),)

    return _make(data, (a,), bw)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit: 0.5 x (1 + erf(x / sqrt(2)))."""
    a = _coerce(a)
    return mul(mul(a, 0.5), add(erf(mul(a, 1.0 / np.sqrt(2.0))), 1.0))


# ---- reductions ---------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy() if not keepdims
                    else np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(data, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_pool(a) -> Tensor:
    """Mean over the time axis (rows) of a (T, d) sequence."""
    return mean(a, axis=0)


def _lse_weights(data: np.ndarray, out_k: np.ndarray) -> np.ndarray:
    """softmax weights exp(x - lse(x)); rows that reduced to -inf get 0."""
    with np.errstate(invalid="ignore"):
        w = np.exp(data - out_k)
    return np.where(np.isneginf(out_k), 0.0, w)


def logsumexp(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Overflow-safe log-sum-exp; -inf entries act as additive identity."""
    a = _coerce(a)
    m = np.max(a.data, axis=axis, keepdims=True) if a.data.size else _as_array(-np.inf)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = m_safe + np.log(np.sum(np.exp(a.data - m_safe), axis=axis, keepdims=True))
    out_k = np.where(np.isneginf(m), -np.inf, out_k)
    data = out_k if keepdims else np.squeeze(out_k, axis=axis) if axis is not None else out_k.reshape(())

    def bw(g):
        gg = g if keepdims else (np.expand_dims(g, axis) if axis is not None else g)
        return (_lse_weights(a.data, out_k) * gg,)

    return _make(data, (a,), bw)


def logaddexp(a, b) -> Tensor:
    """Elementwise log(e^a + e^b), stable, with -inf as identity."""
    a, b = _coerce(a), _coerce(b)
    data = np.logaddexp(a.data, b.data)
    sa, sb = a.data.shape, b.data.shape

    def bw(g):
        with np.errstate(invalid="ignore"):
            wa = np.exp(a.data - data)
            wb = np.exp(b.data - data)
        neg = np.isneginf(data)
        wa = np.where(neg, 0.0, wa)
        wb = np.where(neg, 0.0, wb)
        return _unbroadcast(g * wa, sa), _unbroadcast(g * wb, sb)

    return _make(data, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    ax = axis % a.data.ndim
    return exp(sub(a, logsumexp(a, axis=ax, keepdims=True)))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    ax = axis % a.data.ndim
    return sub(a, logsumexp(a, axis=ax, keepdims=True))


# ---- composites ---------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply the
    affine (gamma, beta).  A constant vector normalizes to all zeros."""
    x = _coerce(x)
    ax = x.data.ndim - 1
    mu = mean(x, axis=ax, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=ax, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gamma), beta)
