"""The full network: learnable time-domain frontend, dual-axis patch
embeddings with class tokens, the two scanning paths, cross-path fusion,
the angular-margin ID head, and anomaly scoring.

Patch layout: the 3-channel feature block (3, M, N) is cut into I slabs of
K frames along time and J slabs of H mel bins along frequency; each slab is
flattened channel-major, then frequency, then frame.  The class token is
prepended, but the per-path summary is read from the last scan position so
that, under causal scanning, it has seen every patch.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .config import FeatureConfig, ModelConfig
from .errors import LookupError_, ShapeError
from .params import ParamStore
from .ssm import init_ssm_block, mamba_block


def patch_geometry(frames: int, mel_bins: int, cfg: ModelConfig) -> dict:
    """Derived patch window sizes and flattened patch lengths."""
    k = -(-frames // cfg.time_patches)
    h = -(-mel_bins // cfg.freq_patches)
    return {
        "time_window": k,
        "freq_window": h,
        "time_patch_dim": 3 * mel_bins * k,
        "freq_patch_dim": 3 * h * frames,
        "time_pad": cfg.time_patches * k - frames,
        "freq_pad": cfg.freq_patches * h - mel_bins,
    }


def patchify_time(est: ad.Tensor, cfg: ModelConfig) -> ad.Tensor:
    """(B, 3, M, N) -> (B, I, 3*M*K) slabs of K frames, zero-padded at the end."""
    b, c, m, n = est.data.shape
    geo = patch_geometry(n, m, cfg)
    k = geo["time_window"]
    padded = ad.pad_axis(est, 3, geo["time_pad"])
    x = ad.reshape(padded, (b, c, m, cfg.time_patches, k))
    x = ad.transpose(x, (0, 3, 1, 2, 4))
    return ad.reshape(x, (b, cfg.time_patches, c * m * k))


def patchify_freq(est: ad.Tensor, cfg: ModelConfig) -> ad.Tensor:
    """(B, 3, M, N) -> (B, J, 3*H*N) slabs of H mel bins."""
    b, c, m, n = est.data.shape
    geo = patch_geometry(n, m, cfg)
    h = geo["freq_window"]
    padded = ad.pad_axis(est, 2, geo["freq_pad"])
    x = ad.reshape(padded, (b, c, cfg.freq_patches, h, n))
    x = ad.transpose(x, (0, 2, 1, 3, 4))
    return ad.reshape(x, (b, cfg.freq_patches, c * h * n))


def standardize(x: ad.Tensor, eps: float = 1e-8) -> ad.Tensor:
    """Per-sample zero-mean unit-variance over all but the batch axis."""
    axes = tuple(range(1, x.data.ndim))
    mu = ad.mean_(x, axis=axes, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.mean_(ad.square(centered), axis=axes, keepdims=True)
    return ad.div(centered, ad.add(ad.sqrt(var), eps))


def unit_rows(x: ad.Tensor, axis: int) -> ad.Tensor:
    """Normalize vectors along ``axis`` with an epsilon-clamped norm."""
    sumsq = ad.sum_(ad.square(x), axis=axis, keepdims=True)
    norm = ad.sqrt(ad.clip(sumsq, 1e-24, np.inf))
    return ad.div(x, norm)


class EstmModel:
    """Trainable model over precomputed spectral channels plus raw audio."""

    def __init__(self, model_cfg: ModelConfig, feat_cfg: FeatureConfig,
                 n_classes: int, seed: int = 0, dtype=np.float32):
        model_cfg.validate()
        feat_cfg.validate()
        if n_classes < 2:
            raise ShapeError("model needs at least 2 ID classes")
        self.cfg = model_cfg
        self.feat = feat_cfg
        self.n_classes = n_classes
        self.geo = patch_geometry(feat_cfg.frames, feat_cfg.mel_bins, model_cfg)
        self.store = ParamStore(dtype)
        self._build(np.random.default_rng(seed))

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def _build(self, rng):
        cfg = self.cfg
        store = self.store
        win, hop, m = self.feat.win, self.feat.hop, self.feat.mel_bins

        def uniform(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        store.add("tgram.conv0.w", uniform((win, m), win))
        store.add("tgram.conv0.b", np.zeros(m))
        for i in range(cfg.tgram_blocks):
            store.add(f"tgram.block{i}.norm.gain", np.ones(m))
            store.add(f"tgram.block{i}.norm.bias", np.zeros(m))
            store.add(f"tgram.block{i}.conv.w", uniform((3 * m, m), 3 * m))
            store.add(f"tgram.block{i}.conv.b", np.zeros(m))

        for path, count, patch_dim in (
            ("time", cfg.time_patches, self.geo["time_patch_dim"]),
            ("freq", cfg.freq_patches, self.geo["freq_patch_dim"]),
        ):
            if not self._path_enabled(path):
                continue
            store.add(f"{path}.embed.w", uniform((patch_dim, cfg.d_model), patch_dim))
            store.add(f"{path}.cls", 0.02 * rng.standard_normal(cfg.d_model))
            store.add(f"{path}.pos", 0.02 * rng.standard_normal((count + 1, cfg.d_model)))
            for i in range(cfg.depth):
                init_ssm_block(store, f"{path}.block{i}", cfg, rng)
            store.add(f"align.{path}.w", uniform((cfg.d_model, cfg.d_model), cfg.d_model))

        store.add("head.w", uniform((cfg.d_model, self.n_classes), cfg.d_model))

    def _path_enabled(self, path: str) -> bool:
        return ("t" if path == "time" else "s") in self.cfg.paths

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def tgram_forward(self, wave: ad.Tensor) -> ad.Tensor:
        """Large-kernel strided conv plus refinement blocks; (B, L) -> (B, M, N)."""
        store = self.store
        frames = ad.unfold(wave, self.feat.win, self.feat.hop)
        y = ad.add(ad.matmul(frames, store["tgram.conv0.w"]), store["tgram.conv0.b"])
        n = y.data.shape[1]
        for i in range(self.cfg.tgram_blocks):
            y = ad.layer_norm(y, store[f"tgram.block{i}.norm.gain"],
                              store[f"tgram.block{i}.norm.bias"])
            y = ad.leaky_relu(y, 0.01)
            padded = ad.pad_axis(y, 1, 1, before=1)
            stacked = ad.concat(
                [padded[:, 0:n], padded[:, 1 : n + 1], padded[:, 2 : n + 2]], axis=2
            )
            y = ad.add(ad.matmul(stacked, store[f"tgram.block{i}.conv.w"]),
                       store[f"tgram.block{i}.conv.b"])
        return ad.transpose(y, (0, 2, 1))

    def fuse_channels(self, mel: np.ndarray, emel: np.ndarray,
                      wave: np.ndarray) -> ad.Tensor:
        """Standardized 3-channel block (B, 3, M, N); the third channel is live."""
        dtype = self.store.dtype
        b, m, n = mel.shape
        tgram = self.tgram_forward(ad.Tensor(np.ascontiguousarray(wave, dtype=dtype)))
        parts = []
        for chan in (ad.Tensor(np.ascontiguousarray(mel, dtype=dtype)),
                     ad.Tensor(np.ascontiguousarray(emel, dtype=dtype)),
                     tgram):
            parts.append(ad.reshape(standardize(chan), (b, 1, m, n)))
        return ad.concat(parts, axis=1)

    def embed(self, patches: ad.Tensor, path: str) -> ad.Tensor:
        """Project patches, prepend the class token, add positional embeddings."""
        cfg = self.cfg
        tok = ad.matmul(patches, self.store[f"{path}.embed.w"])
        b = tok.data.shape[0]
        cls = ad.expand(ad.reshape(self.store[f"{path}.cls"], (1, 1, cfg.d_model)),
                        (b, 1, cfg.d_model))
        return ad.add(ad.concat([cls, tok], axis=1), self.store[f"{path}.pos"])

    def path_summary(self, est: ad.Tensor, path: str) -> ad.Tensor:
        """Patchify -> embed -> blocks -> last scan position -> alignment map."""
        cfg = self.cfg
        patches = patchify_time(est, cfg) if path == "time" else patchify_freq(est, cfg)
        seq = self.embed(patches, path)
        for i in range(cfg.depth):
            seq = mamba_block(seq, self.store, f"{path}.block{i}", cfg)
        summary = seq[:, -1, :]
        return ad.matmul(summary, self.store[f"align.{path}.w"])

    def forward(self, mel: np.ndarray, emel: np.ndarray,
                wave: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """Returns fused features (B, D) and margin-free logits (B, C)."""
        est = self.fuse_channels(mel, emel, wave)
        fused = None
        for path in ("freq", "time"):
            if not self._path_enabled(path):
                continue
            part = self.path_summary(est, path)
            fused = part if fused is None else ad.add(fused, part)
        cos = ad.matmul(unit_rows(fused, axis=1), unit_rows(self.store["head.w"], axis=0))
        logits = ad.mul(cos, self.cfg.arcface_scale)
        return fused, logits

    # ------------------------------------------------------------------
    # loss and scoring
    # ------------------------------------------------------------------

    def arcface_loss(self, features: ad.Tensor, labels: np.ndarray,
                     margin: float | None = None, scale: float | None = None) -> ad.Tensor:
        """Cross-entropy over cosine logits with an additive angular margin on
        the target class."""
        m = self.cfg.arcface_margin if margin is None else margin
        s = self.cfg.arcface_scale if scale is None else scale
        cos = ad.matmul(unit_rows(features, axis=1),
                        unit_rows(self.store["head.w"], axis=0))
        cos_safe = ad.clip(cos, -1.0, 1.0)
        sin = ad.sqrt(ad.clip(ad.add(ad.mul(ad.square(cos_safe), -1.0), 1.0), 1e-24, 1.0))
        phi = ad.sub(ad.mul(cos_safe, math.cos(m)), ad.mul(sin, math.sin(m)))
        onehot = np.zeros(cos.data.shape, dtype=cos.data.dtype)
        onehot[np.arange(labels.shape[0]), labels] = 1.0
        adjusted = ad.add(cos, ad.mul(ad.as_tensor(onehot), ad.sub(phi, cos)))
        return ad.cross_entropy_logits(ad.mul(adjusted, s), labels)

    def scores(self, mel: np.ndarray, emel: np.ndarray, wave: np.ndarray,
               class_indices: np.ndarray) -> np.ndarray:
        """Anomaly scores for a batch: -log softmax probability of the clip's
        own ID class under margin-free logits."""
        _, logits = self.forward(mel, emel, wave)
        return negative_log_probability(logits.data, class_indices)


def negative_log_probability(logits: np.ndarray, class_indices: np.ndarray) -> np.ndarray:
    """-ln p[class] under a softmax over logits; shift-invariant and >= 0."""
    logits = np.asarray(logits, dtype=np.float64)
    class_indices = np.asarray(class_indices)
    if np.any(class_indices < 0) or np.any(class_indices >= logits.shape[1]):
        raise LookupError_(
            f"class index out of range for {logits.shape[1]} classes"
        )
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(logits.shape[0]), class_indices]
