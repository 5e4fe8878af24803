"""Selective state-space core: input-dependent discretization, the scan
recurrence, and a single gated block with convolution and residual.

Shapes follow (batch, seq, channels): the block maps (B, T, D) -> (B, T, D)
with an inner width G = expand * D and a per-channel state of size S.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .errors import NumericalError, ShapeError
from .kernels import scan_chunked, scan_sequential  # re-exported  # noqa: F401
from .params import ParamStore


def softplus_step(raw: np.ndarray) -> np.ndarray:
    """Positive step sizes via the overflow-safe softplus."""
    return np.logaddexp(np.asarray(0.0, dtype=np.asarray(raw).dtype), raw)


@dataclass
class ScanInputs:
    a_bar: np.ndarray  # (B, T, G, S) decay in (0, 1) under zoh
    b_x: np.ndarray    # (B, T, G, S) discretized input injection
    c: np.ndarray      # (B, T, S) readout weights


def discretize(step, decay_log, inject, x, readout=None, mode="zoh",
               context="ssm") -> ScanInputs:
    """Turn continuous-time parameters into per-step scan inputs.

    zoh:            a_bar = exp(step * A)     with A = -exp(decay_log)
    euler-literal:  a_bar = 1 + step * A      (first-order hold on the decay)
    both:           b_x   = step * inject * x
    """
    step = np.asarray(step)
    decay = -np.exp(decay_log)
    prod = step[..., None] * decay
    if mode == "zoh":
        a_bar = np.exp(prod)
    elif mode == "euler-literal":
        a_bar = 1.0 + prod
    else:
        raise ShapeError(f"unknown discretization mode {mode!r}")
    b_x = step[..., None] * inject[..., None, :] * x[..., None]
    if not (np.isfinite(a_bar).all() and np.isfinite(b_x).all()):
        raise NumericalError(f"{context}: non-finite discretized scan inputs")
    return ScanInputs(a_bar=a_bar, b_x=b_x, c=readout)


def init_ssm_block(store: ParamStore, prefix: str, cfg: ModelConfig,
                   rng: np.random.Generator) -> None:
    """Register one block's parameters under ``prefix`` (order is load-bearing
    for seeded reproducibility)."""
    d = cfg.d_model
    g = cfg.d_inner
    s = cfg.d_state
    k = cfg.conv_kernel

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    store.add(f"{prefix}.norm.gain", np.ones(d))
    store.add(f"{prefix}.norm.bias", np.zeros(d))
    store.add(f"{prefix}.in.w", uniform((d, 2 * g), d))
    store.add(f"{prefix}.in.b", np.zeros(2 * g))
    store.add(f"{prefix}.conv.w", uniform((g, k), k))
    store.add(f"{prefix}.conv.b", np.zeros(g))
    store.add(f"{prefix}.step.w", uniform((g, g), g))
    step_init = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=g))
    store.add(f"{prefix}.step.b", np.log(np.expm1(step_init)))
    store.add(f"{prefix}.inject.w", uniform((g, s), g))
    store.add(f"{prefix}.readout.w", uniform((g, s), g))
    store.add(f"{prefix}.decay_log", np.tile(np.log(np.arange(1, s + 1)), (g, 1)))
    store.add(f"{prefix}.skip", np.ones(g))
    store.add(f"{prefix}.out.w", uniform((g, d), g))
    store.add(f"{prefix}.out.b", np.zeros(d))


def mamba_block(x: ad.Tensor, store: ParamStore, prefix: str, cfg: ModelConfig) -> ad.Tensor:
    """Norm -> in-projection -> causal depthwise conv -> SiLU -> selective
    scan -> gate -> out-projection, with a residual around the whole block."""
    if x.data.ndim != 3 or x.data.shape[2] != cfg.d_model:
        raise ShapeError(f"{prefix}: expected (B, T, {cfg.d_model}), got {x.data.shape}")
    B, T, _ = x.data.shape
    g = cfg.d_inner

    h = ad.layer_norm(x, store[f"{prefix}.norm.gain"], store[f"{prefix}.norm.bias"])
    hz = ad.add(ad.matmul(h, store[f"{prefix}.in.w"]), store[f"{prefix}.in.b"])
    inner = hz[:, :, :g]
    gate = hz[:, :, g:]

    inner = ad.dwconv(inner, store[f"{prefix}.conv.w"], store[f"{prefix}.conv.b"])
    inner = ad.silu(inner)

    step = ad.softplus(ad.add(ad.matmul(inner, store[f"{prefix}.step.w"]),
                              store[f"{prefix}.step.b"]))
    inject = ad.matmul(inner, store[f"{prefix}.inject.w"])
    readout = ad.matmul(inner, store[f"{prefix}.readout.w"])

    decay = ad.mul(ad.exp(store[f"{prefix}.decay_log"]), -1.0)
    step4 = ad.reshape(step, (B, T, g, 1))
    prod = ad.mul(step4, decay)
    if cfg.discretization == "zoh":
        a_bar = ad.exp(prod)
    else:
        a_bar = ad.add(prod, 1.0)
    if not np.isfinite(a_bar.data).all():
        raise NumericalError(f"{prefix}: non-finite discretized decay")
    b_x = ad.mul(ad.mul(step4, ad.reshape(inject, (B, T, 1, cfg.d_state))),
                 ad.reshape(inner, (B, T, g, 1)))

    y = ad.ssm_scan(a_bar, b_x, readout, chunk=cfg.scan_chunk)
    if cfg.ssm_skip:
        y = ad.add(y, ad.mul(inner, store[f"{prefix}.skip"]))
    y = ad.mul(y, ad.silu(gate))
    out = ad.add(ad.matmul(y, store[f"{prefix}.out.w"]), store[f"{prefix}.out.b"])
    return ad.add(out, x)
