"""Minimal reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional closure that maps the output
gradient to parent gradients.  ``backward()`` walks the recorded graph in
reverse topological order and accumulates ``.grad`` on every tensor that
requires it.  Only the ops this model needs exist here; each op keeps the
dtype of its inputs (f32 or f64 end to end).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(data, parents, vjp):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (),
                  vjp=vjp if req else None)


def backward(out: Tensor, seed=None) -> None:
    """Accumulate gradients of ``out`` into every reachable requires-grad tensor."""
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    out.grad = np.ones_like(out.data) if seed is None else seed
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for p, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = g
            else:
                p.grad = p.grad + g


# ---------------------------------------------------------------------------
# elementwise / arithmetic ops
# ---------------------------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        return _make(a.data + b, (a,), lambda g: (g,))
    b = as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        return _make(a.data * b, (a,), lambda g: (g * b,))
    b = as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),))


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def clip(a, lo, hi):
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        mask = (a.data >= lo) & (a.data <= hi)
        return (g * mask.astype(g.dtype),)

    return _make(out, (a,), vjp)


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return _make(out, (a,), lambda g: (g * (s * (1.0 + a.data * (1.0 - s))),))


def softplus(a):
    """log(1 + exp(x)) in the overflow-safe logaddexp form."""
    a = as_tensor(a)
    out = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),))


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    out = np.where(a.data >= 0, a.data, slope * a.data)

    def vjp(g):
        return (g * np.where(a.data >= 0, g.dtype.type(1.0), g.dtype.type(slope)),)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def slice_(a, key):
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        return (gx,)

    return _make(out, (a,), vjp)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def pad_axis(a, axis, after, before=0):
    """Zero-pad one axis with ``before``/``after`` entries."""
    a = as_tensor(a)
    if after == 0 and before == 0:
        return a
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    idx = tuple(
        slice(before, before + s) if ax == axis else slice(0, s)
        for ax, s in enumerate(a.data.shape)
    )

    def vjp(g):
        return (g[idx],)

    return _make(out, (a,), vjp)


def expand(a, shape):
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, (a,), vjp)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[i] for i in ax]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra / structured ops
# ---------------------------------------------------------------------------


def matmul(x, w):
    """x (..., P) @ w (P, Q); the weight side must be 2-D."""
    x, w = as_tensor(x), as_tensor(w)
    if w.data.ndim != 2:
        raise ShapeError(f"matmul weight must be 2-D, got {w.data.shape}")
    out = x.data @ w.data

    def vjp(g):
        gx = g @ w.data.T
        P = x.data.shape[-1]
        Q = g.shape[-1]
        gw = x.data.reshape(-1, P).T @ g.reshape(-1, Q)
        return gx, gw

    return _make(out, (x, w), vjp)


def unfold(x, win, hop):
    """Frame a batch of 1-D signals: (B, L) -> (B, N, win) with N = 1 + (L-win)//hop."""
    x = as_tensor(x)
    B, L = x.data.shape
    n = 1 + (L - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    out = x.data[:, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        for f in range(n):
            gx[:, f * hop : f * hop + win] += g[:, f]
        return (gx,)

    return _make(out, (x,), vjp)


def dwconv(x, w, bias):
    """Depthwise causal conv along the sequence: x (B,L,C), w (C,K), bias (C)."""
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    xd = np.ascontiguousarray(x.data)
    out = kernels.dwconv_forward(xd, w.data, bias.data)

    def vjp(g):
        return kernels.dwconv_backward(xd, w.data, np.ascontiguousarray(g))

    return _make(out, (x, w, bias), vjp)


def ssm_scan(a, b, c, chunk=0):
    """Linear recurrence h_t = a_t*h_{t-1} + b_t with readout y_t = <c_t, h_t>.

    chunk > 1 computes the forward pass with the associative chunked kernel;
    the backward pass is the reverse-time scan either way.
    """
    a, b, c = as_tensor(a), as_tensor(b), as_tensor(c)
    ad = np.ascontiguousarray(a.data)
    bd = np.ascontiguousarray(b.data)
    cd = np.ascontiguousarray(c.data)
    if chunk and chunk > 1:
        y, h = kernels.scan_chunked(ad, bd, cd, chunk)
    else:
        y, h = kernels.scan_sequential(ad, bd, cd)

    def vjp(g):
        return kernels.scan_backward(ad, cd, h, np.ascontiguousarray(g))

    return _make(y, (a, b, c), vjp)


def cross_entropy_logits(logits, labels):
    """Mean cross-entropy over a batch from raw logits (B, C) and int labels (B,)."""
    logits = as_tensor(logits)
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    probs = ez / ez.sum(axis=1, keepdims=True)
    B = z.shape[0]
    nll = -np.log(probs[np.arange(B), labels])
    out = np.asarray(nll.mean(), dtype=z.dtype)

    def vjp(g):
        gz = probs.copy()
        gz[np.arange(B), labels] -= 1.0
        return (gz * (g / B),)

    return _make(out, (logits,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis; learnable gain and bias."""
    mu = mean_(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean_(square(xc), axis=-1, keepdims=True)
    inv = div(as_tensor(np.asarray(1.0, dtype=x.dtype)), sqrt(add(var, eps)))
    return add(mul(mul(xc, inv), gain), bias)
