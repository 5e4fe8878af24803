"""Waveform-to-feature pipeline: log-Mel spectrogram, the tri-statistic
frame gate, the enhanced spectrogram, and the fused 3-channel feature block.

All functions here are pure and operate on float64 numpy arrays; the
learnable time-domain frontend lives in :mod:`estm.model` because its
parameters train with the network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import FeatureConfig
from .errors import CacheFormatError, ConfigError, InputError, ShapeError
from .wavio import read_wav

CACHE_MAGIC = b"ESTG"
CACHE_VERSION = 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputError("waveform must be a non-empty 1-D array")
        if not np.isfinite(self.samples).all():
            raise InputError("waveform contains non-finite samples")


@dataclass
class TsgGate:
    gate: np.ndarray
    alpha: float
    median: np.ndarray
    rms: np.ndarray
    variance: np.ndarray


def load_waveform(path, cfg: FeatureConfig) -> Waveform:
    samples, rate = read_wav(path)
    if rate != cfg.sample_rate:
        raise ConfigError(
            f"{path}: sample rate {rate} Hz does not match configured {cfg.sample_rate} Hz"
        )
    return Waveform(samples, rate)


def canonicalize(wave: Waveform, target_length: int) -> Waveform:
    """Crop from the start or zero-pad at the tail to exactly target_length."""
    x = wave.samples
    if x.size >= target_length:
        out = x[:target_length]
    else:
        out = np.concatenate([x, np.zeros(target_length - x.size, dtype=x.dtype)])
    return Waveform(out, wave.sample_rate_hz)


def hann_window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Frame without centering: (L,) -> (N, win) with N = 1 + (L-win)//hop."""
    if x.size < win:
        raise InputError(f"waveform of {x.size} samples is shorter than one window ({win})")
    n = 1 + (x.size - win) // hop
    frames = np.lib.stride_tricks.as_strided(
        x, shape=(n, win), strides=(x.strides[0] * hop, x.strides[0])
    )
    return frames.copy()


def mel_filterbank(sample_rate: int, win: int, mel_bins: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale covering 0 .. sr/2, no norm."""
    n_bins = win // 2 + 1

    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    points_hz = to_hz(np.linspace(0.0, to_mel(sample_rate / 2.0), mel_bins + 2))
    bin_hz = np.arange(n_bins) * sample_rate / win
    fb = np.zeros((mel_bins, n_bins))
    for m in range(mel_bins):
        lo, center, hi = points_hz[m], points_hz[m + 1], points_hz[m + 2]
        up = (bin_hz - lo) / max(center - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel(wave: Waveform, cfg: FeatureConfig, filterbank: np.ndarray | None = None) -> np.ndarray:
    """Log power mel spectrogram (mel_bins, frames), natural log, floored."""
    frames = frame_signal(wave.samples, cfg.win, cfg.hop)
    spec = np.fft.rfft(frames * hann_window(cfg.win), axis=1)
    power = spec.real**2 + spec.imag**2
    if filterbank is None:
        filterbank = mel_filterbank(cfg.sample_rate, cfg.win, cfg.mel_bins)
    mel = filterbank @ power.T
    return np.log(mel + cfg.log_floor)


def tsg_gate(mel: np.ndarray, alpha: float) -> TsgGate:
    """Per-frame sigmoid gate from median + RMS + variance, de-centered by their mean.

    Statistics run over the frequency axis of each frame; the population
    variance and the even-length median (mean of central order statistics)
    follow the documented conventions.
    """
    if mel.ndim != 2 or mel.shape[1] == 0:
        raise InputError("gate needs a non-empty (mel_bins, frames) matrix")
    if alpha <= 0:
        raise ConfigError("gate scale alpha must be > 0")
    med = np.median(mel, axis=0)
    rms = np.sqrt(np.mean(mel**2, axis=0))
    var = np.var(mel, axis=0)
    s = med + rms + var
    mu = s.mean()
    z = alpha * (s - mu)
    gate = np.empty_like(z)
    pos = z >= 0
    gate[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    gate[~pos] = e / (1.0 + e)
    # keep the open-interval contract even where the sigmoid saturates in fp
    gate = np.clip(gate, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return TsgGate(gate=gate, alpha=alpha, median=med, rms=rms, variance=var)


def tsg_enhance(mel: np.ndarray, gate: TsgGate) -> np.ndarray:
    """Broadcast the frame gate over frequency and scale the spectrogram."""
    if gate.gate.shape[0] != mel.shape[1]:
        raise ShapeError(
            f"gate length {gate.gate.shape[0]} does not match {mel.shape[1]} frames"
        )
    return mel * gate.gate[None, :]


def assemble_estgram(mel: np.ndarray, emel: np.ndarray, tgram: np.ndarray) -> np.ndarray:
    """Stack [mel, enhanced mel, tgram] into the (3, M, N) network input."""
    if not (mel.shape == emel.shape == tgram.shape):
        raise ShapeError(
            f"channel shapes differ: {mel.shape}, {emel.shape}, {tgram.shape}"
        )
    return np.stack([mel, emel, tgram], axis=0)


def standardize_channels(est: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Zero-mean unit-variance per channel of one clip."""
    mu = est.mean(axis=(-2, -1), keepdims=True)
    sd = est.std(axis=(-2, -1), keepdims=True)
    return (est - mu) / (sd + eps)


def extract_static_channels(wave: Waveform, cfg: FeatureConfig,
                            filterbank: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mel and enhanced-mel channels for one canonical clip.

    With tsg disabled the second channel is a plain copy of the first, which
    is the log-Mel-only feature variant used by the ablation matrix.
    """
    mel = log_mel(wave, cfg, filterbank)
    if cfg.tsg:
        emel = tsg_enhance(mel, tsg_gate(mel, cfg.alpha))
    else:
        emel = mel.copy()
    return mel, emel


def write_feature_cache(path, est: np.ndarray) -> None:
    """Binary cache: magic, version u32, M u32, N u32, 3*M*N f32 LE channel-major."""
    if est.ndim != 3 or est.shape[0] != 3:
        raise ShapeError(f"expected (3, M, N) feature block, got {est.shape}")
    _, m, n = est.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<III", CACHE_VERSION, m, n))
        fh.write(np.ascontiguousarray(est, dtype="<f4").tobytes())


def read_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise CacheFormatError(f"{path}: bad feature-cache magic {magic!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise CacheFormatError(f"{path}: truncated feature-cache header")
        version, m, n = struct.unpack("<III", header)
        if version != CACHE_VERSION:
            raise CacheFormatError(f"{path}: unsupported feature-cache version {version}")
        payload = fh.read(3 * m * n * 4)
        if len(payload) != 3 * m * n * 4:
            raise CacheFormatError(f"{path}: truncated feature-cache payload")
        if fh.read(1):
            raise CacheFormatError(f"{path}: trailing bytes after feature-cache payload")
    return np.frombuffer(payload, dtype="<f4").reshape(3, m, n).astype(np.float64)
