"""16-bit PCM mono WAV reading and writing via the stdlib wave module."""

from __future__ import annotations

import wave

import numpy as np

from .errors import InputError


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV; returns (samples in [-1, 1] float64, rate)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise InputError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise InputError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
            if fh.getcomptype() != "NONE":
                raise InputError(f"{path}: compressed WAV not supported")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise InputError(f"{path}: corrupt or non-WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    """Write float samples in [-1, 1] as mono 16-bit PCM.

    The scale matches read_wav (1/32768) so write(read(f)) is the identity.
    """
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
