"""Hot numeric kernels: selective-scan recurrence and depthwise causal conv.

Two interchangeable implementations live here:

* pure-numpy reference versions (``*_numpy``), vectorized over batch and
  channel with a Python loop over the sequence axis;
* numba ``@njit`` versions (``*_numba``) with explicit loops, compiled
  lazily and cached on disk.

The active backend is chosen once at import from the environment variable
``ESTM_BACKEND`` (``auto`` | ``numba`` | ``numpy``; default ``auto`` picks
numba when importable).  ``set_backend()`` switches it at runtime, which the
benchmark and the test suite use to exercise both paths.

Array contracts (dtype f32 or f64, all C-contiguous):

    scan:   a (B,L,G,S) decay, b (B,L,G,S) injection, c (B,L,S) readout
            -> y (B,L,G), h (B,L,G,S) state trajectory
    dwconv: x (B,L,C), w (C,K), bias (C) -> y (B,L,C), causal left padding
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# pure-numpy reference kernels
# ---------------------------------------------------------------------------


def scan_sequential_numpy(a, b, c):
    """Exact sequential recurrence h_t = a_t*h_{t-1} + b_t, y_t = <c_t, h_t>."""
    B, L, G, S = a.shape
    h = np.empty_like(a)
    state = np.zeros((B, G, S), dtype=a.dtype)
    for t in range(L):
        state = a[:, t] * state + b[:, t]
        h[:, t] = state
    y = np.einsum("blgs,bls->blg", h, c)
    return y, h


def scan_chunked_numpy(a, b, c, chunk):
    """Chunked scan via associative (decay, increment) composition.

    Each chunk is scanned from a zero state; the inter-chunk carry is then
    folded back using the cumulative decay product.  Mathematically identical
    to the sequential scan.
    """
    B, L, G, S = a.shape
    if chunk <= 1 or chunk >= L:
        return scan_sequential_numpy(a, b, c)
    n_chunks = -(-L // chunk)
    pad = n_chunks * chunk - L
    if pad:
        a_p = np.concatenate([a, np.ones((B, pad, G, S), dtype=a.dtype)], axis=1)
        b_p = np.concatenate([b, np.zeros((B, pad, G, S), dtype=b.dtype)], axis=1)
    else:
        a_p, b_p = a, b
    a_c = a_p.reshape(B, n_chunks, chunk, G, S)
    b_c = b_p.reshape(B, n_chunks, chunk, G, S)

    pcum = np.cumprod(a_c, axis=2)
    hloc = np.empty_like(b_c)
    state = np.zeros((B, n_chunks, G, S), dtype=a.dtype)
    for t in range(chunk):
        state = a_c[:, :, t] * state + b_c[:, :, t]
        hloc[:, :, t] = state

    carry = np.zeros((B, G, S), dtype=a.dtype)
    h = np.empty_like(b_c)
    for k in range(n_chunks):
        h[:, k] = hloc[:, k] + pcum[:, k] * carry[:, None]
        carry = h[:, k, -1]
    h = h.reshape(B, n_chunks * chunk, G, S)[:, :L]
    y = np.einsum("blgs,bls->blg", h, c)
    return y, h


def scan_backward_numpy(a, c, h, dy):
    """Reverse-mode pass for the scan: gradients for decay, injection, readout."""
    B, L, G, S = a.shape
    da = np.empty_like(a)
    db = np.empty_like(a)
    dc = np.einsum("blg,blgs->bls", dy, h)
    dstate = dy[:, L - 1, :, None] * c[:, L - 1, None, :]
    db[:, L - 1] = dstate
    for t in range(L - 2, -1, -1):
        da[:, t + 1] = dstate * h[:, t]
        dstate = dy[:, t, :, None] * c[:, t, None, :] + a[:, t + 1] * dstate
        db[:, t] = dstate
    da[:, 0] = 0.0
    return da, db, dc


def dwconv_forward_numpy(x, w, bias):
    """Depthwise causal conv along the sequence axis (left zero padding)."""
    B, L, C = x.shape
    K = w.shape[1]
    xp = np.concatenate([np.zeros((B, K - 1, C), dtype=x.dtype), x], axis=1)
    y = np.broadcast_to(bias, (B, L, C)).copy()
    for k in range(K):
        y += xp[:, k : k + L] * w[:, k]
    return y


def dwconv_backward_numpy(x, w, dy):
    B, L, C = x.shape
    K = w.shape[1]
    xp = np.concatenate([np.zeros((B, K - 1, C), dtype=x.dtype), x], axis=1)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for k in range(K):
        dxp[:, k : k + L] += dy * w[:, k]
        dw[:, k] = np.einsum("blc,blc->c", dy, xp[:, k : k + L])
    dbias = dy.sum(axis=(0, 1))
    return dxp[:, K - 1 :], dw, dbias


# ---------------------------------------------------------------------------
# numba kernels (same contracts, explicit loops)
# ---------------------------------------------------------------------------


# Accumulators below start from an array element (never a float literal) so
# f32 inputs stay f32 inside the jitted loops.


@njit(cache=True)
def _scan_sequential_jit(a, b, c, y, h):
    B, L, G, S = a.shape
    for bi in range(B):
        for g in range(G):
            for s in range(S):
                state = b[bi, 0, g, s]
                h[bi, 0, g, s] = state
                for t in range(1, L):
                    state = a[bi, t, g, s] * state + b[bi, t, g, s]
                    h[bi, t, g, s] = state
    _scan_readout_jit(c, h, y)


@njit(cache=True)
def _scan_readout_jit(c, h, y):
    B, L, G, S = h.shape
    for bi in range(B):
        for t in range(L):
            for g in range(G):
                acc = c[bi, t, 0] * h[bi, t, g, 0]
                for s in range(1, S):
                    acc += c[bi, t, s] * h[bi, t, g, s]
                y[bi, t, g] = acc


@njit(cache=True)
def _scan_chunked_jit(a, b, c, chunk, y, h):
    B, L, G, S = a.shape
    n_chunks = (L + chunk - 1) // chunk
    for bi in range(B):
        for g in range(G):
            for s in range(S):
                local = b[bi, 0, g, s]
                h[bi, 0, g, s] = local
                for t in range(1, min(chunk, L)):
                    local = a[bi, t, g, s] * local + b[bi, t, g, s]
                    h[bi, t, g, s] = local
                carry = h[bi, min(chunk, L) - 1, g, s]
                for k in range(1, n_chunks):
                    t0 = k * chunk
                    t1 = min(t0 + chunk, L)
                    local = b[bi, t0, g, s]
                    pcum = a[bi, t0, g, s]
                    h[bi, t0, g, s] = local + pcum * carry
                    for t in range(t0 + 1, t1):
                        local = a[bi, t, g, s] * local + b[bi, t, g, s]
                        pcum = pcum * a[bi, t, g, s]
                        h[bi, t, g, s] = local + pcum * carry
                    carry = h[bi, t1 - 1, g, s]
    _scan_readout_jit(c, h, y)


@njit(cache=True)
def _scan_backward_jit(a, c, h, dy, da, db, dc):
    B, L, G, S = a.shape
    for bi in range(B):
        for t in range(L):
            for s in range(S):
                acc = dy[bi, t, 0] * h[bi, t, 0, s]
                for g in range(1, G):
                    acc += dy[bi, t, g] * h[bi, t, g, s]
                dc[bi, t, s] = acc
    for bi in range(B):
        for g in range(G):
            for s in range(S):
                dstate = dy[bi, L - 1, g] * c[bi, L - 1, s]
                db[bi, L - 1, g, s] = dstate
                for t in range(L - 2, -1, -1):
                    da[bi, t + 1, g, s] = dstate * h[bi, t, g, s]
                    dstate = dy[bi, t, g] * c[bi, t, s] + a[bi, t + 1, g, s] * dstate
                    db[bi, t, g, s] = dstate
                da[bi, 0, g, s] = 0.0
    return


@njit(cache=True)
def _dwconv_forward_jit(x, w, bias, y):
    B, L, C = x.shape
    K = w.shape[1]
    for bi in range(B):
        for t in range(L):
            for ci in range(C):
                acc = bias[ci]
                for k in range(K):
                    tt = t - (K - 1) + k
                    if tt >= 0:
                        acc += w[ci, k] * x[bi, tt, ci]
                y[bi, t, ci] = acc


@njit(cache=True)
def _dwconv_backward_jit(x, w, dy, dx, dw, dbias):
    B, L, C = x.shape
    K = w.shape[1]
    for bi in range(B):
        for t in range(L):
            for ci in range(C):
                g = dy[bi, t, ci]
                dbias[ci] += g
                for k in range(K):
                    tt = t - (K - 1) + k
                    if tt >= 0:
                        dw[ci, k] += g * x[bi, tt, ci]
                        dx[bi, tt, ci] += g * w[ci, k]


def scan_sequential_numba(a, b, c):
    B, L, G, S = a.shape
    y = np.empty((B, L, G), dtype=a.dtype)
    h = np.empty_like(a)
    _scan_sequential_jit(a, b, c, y, h)
    return y, h


def scan_chunked_numba(a, b, c, chunk):
    if chunk <= 1:
        return scan_sequential_numba(a, b, c)
    B, L, G, S = a.shape
    y = np.empty((B, L, G), dtype=a.dtype)
    h = np.empty_like(a)
    _scan_chunked_jit(a, b, c, chunk, y, h)
    return y, h


def scan_backward_numba(a, c, h, dy):
    da = np.empty_like(a)
    db = np.empty_like(a)
    dc = np.empty_like(c)
    _scan_backward_jit(a, c, h, dy, da, db, dc)
    return da, db, dc


def dwconv_forward_numba(x, w, bias):
    y = np.empty_like(x)
    _dwconv_forward_jit(x, w, bias, y)
    return y


def dwconv_backward_numba(x, w, dy):
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    dbias = np.zeros_like(dy[0, 0])
    _dwconv_backward_jit(x, w, dy, dx, dw, dbias)
    return dx, dw, dbias


# ---------------------------------------------------------------------------
# backend dispatch
# ---------------------------------------------------------------------------

_NUMPY_IMPL = {
    "scan_sequential": scan_sequential_numpy,
    "scan_chunked": scan_chunked_numpy,
    "scan_backward": scan_backward_numpy,
    "dwconv_forward": dwconv_forward_numpy,
    "dwconv_backward": dwconv_backward_numpy,
}

_NUMBA_IMPL = {
    "scan_sequential": scan_sequential_numba,
    "scan_chunked": scan_chunked_numba,
    "scan_backward": scan_backward_numba,
    "dwconv_forward": dwconv_forward_numba,
    "dwconv_backward": dwconv_backward_numba,
}

_IMPLS = {"numpy": _NUMPY_IMPL, "numba": _NUMBA_IMPL}

_active_name = "numpy"
_active = _NUMPY_IMPL


def set_backend(name: str) -> str:
    """Select the kernel backend ('numba' or 'numpy'); returns the active name."""
    global _active_name, _active
    if name in ("auto", None, ""):
        name = "numba" if NUMBA_AVAILABLE else "numpy"
    if name not in _IMPLS:
        raise ConfigError(f"unknown kernel backend {name!r}; choose numba or numpy")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise ConfigError("numba backend requested but numba is not importable")
    _active_name = name
    _active = _IMPLS[name]
    return _active_name


def active_backend() -> str:
    return _active_name


def get_impl(name: str | None = None) -> dict:
    """Implementation table for an explicit backend (tests, benchmark)."""
    if name is None:
        return _active
    if name not in _IMPLS:
        raise ConfigError(f"unknown kernel backend {name!r}; choose numba or numpy")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise ConfigError("numba backend requested but numba is not importable")
    return _IMPLS[name]


def scan_sequential(a, b, c):
    return _active["scan_sequential"](a, b, c)


def scan_chunked(a, b, c, chunk):
    return _active["scan_chunked"](a, b, c, chunk)


def scan_backward(a, c, h, dy):
    return _active["scan_backward"](a, c, h, dy)


def dwconv_forward(x, w, bias):
    return _active["dwconv_forward"](x, w, bias)


def dwconv_backward(x, w, dy):
    return _active["dwconv_backward"](x, w, dy)


set_backend(os.environ.get("ESTM_BACKEND", "auto"))
