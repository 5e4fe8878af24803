"""Corpus handling: directory scanning with filename metadata, the label
map, and a deterministic synthetic machine-sound corpus for desk-scale runs.

Expected layout: <root>/<machine_type>/<split>/<condition>_id_<NN>_<NNNNNNNN>.wav
with split in {train, test}.  Files named id_<NN>_<NNNNNNNN>.wav (no
condition prefix) are treated as unlabeled evaluation clips.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SynthConfig
from .errors import CorpusError
from .wavio import write_wav

_NAME_RE = re.compile(r"^(normal|anomaly)_id_(\d+)_(\d+)\.wav$")
_UNLABELED_RE = re.compile(r"^id_(\d+)_(\d+)\.wav$")


@dataclass(frozen=True)
class ClipRecord:
    path: str
    machine_type: str
    machine_id: int
    condition: str  # normal | anomaly | unknown
    split: str      # train | test


def parse_clip_name(name: str) -> tuple[str, int] | None:
    """(condition, machine_id) from a clip filename, or None if unparseable."""
    m = _NAME_RE.match(name)
    if m:
        return m.group(1), int(m.group(2))
    m = _UNLABELED_RE.match(name)
    if m:
        return "unknown", int(m.group(1))
    return None


def scan_corpus(root) -> tuple[list[ClipRecord], list[str]]:
    """Walk the tree into sorted records; returns (records, warnings)."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    records: list[ClipRecord] = []
    warnings: list[str] = []
    for wav in sorted(root.glob("*/*/*.wav")):
        machine_type = wav.parent.parent.name
        split = wav.parent.name
        if split not in ("train", "test"):
            warnings.append(f"skipping {wav}: unknown split directory {split!r}")
            continue
        parsed = parse_clip_name(wav.name)
        if parsed is None:
            warnings.append(f"skipping {wav}: unparseable filename")
            continue
        condition, machine_id = parsed
        if split == "train" and condition != "normal":
            raise CorpusError(
                f"{wav}: train split must contain only normal recordings, got {condition}"
            )
        records.append(
            ClipRecord(
                path=str(wav.relative_to(root)),
                machine_type=machine_type,
                machine_id=machine_id,
                condition=condition,
                split=split,
            )
        )
    if not records:
        raise CorpusError(f"no usable WAV clips under {root}")
    return records, warnings


def build_label_map(records: list[ClipRecord]) -> dict[str, int]:
    """Class index per (machine_type, machine_id), sorted for stability."""
    keys = sorted({(r.machine_type, r.machine_id) for r in records if r.split == "train"})
    if not keys:
        raise CorpusError("no training records to build a label map from")
    return {f"{t}/{i}": idx for idx, (t, i) in enumerate(keys)}


def label_key(record: ClipRecord) -> str:
    return f"{record.machine_type}/{record.machine_id}"


def write_manifest(records: list[ClipRecord], path) -> None:
    payload = [
        {
            "path": r.path,
            "machine_type": r.machine_type,
            "machine_id": r.machine_id,
            "condition": r.condition,
            "split": r.split,
        }
        for r in records
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_manifest(path) -> list[ClipRecord]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise CorpusError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise CorpusError(f"manifest {path} must be a JSON array")
    records = []
    for entry in payload:
        try:
            records.append(
                ClipRecord(
                    path=entry["path"],
                    machine_type=entry["machine_type"],
                    machine_id=int(entry["machine_id"]),
                    condition=entry["condition"],
                    split=entry["split"],
                )
            )
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"manifest {path}: malformed entry {entry!r}") from exc
    return records


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthClass:
    machine_type: str
    machine_id: int
    fundamental_hz: float
    harmonic_amps: tuple[float, ...]
    am_rate_hz: float
    resonance_hz: tuple[float, float]  # class-specific shaped-noise band


ANOMALY_KINDS = ("burst", "harmonic_shift", "band_noise")


def default_synth_classes() -> list[SynthClass]:
    return [
        SynthClass("gear", 0, 110.0, (1.0, 0.6, 0.3, 0.15), 3.0, (1400.0, 1900.0)),
        SynthClass("gear", 1, 185.0, (1.0, 0.35, 0.5, 0.1), 5.0, (2200.0, 2700.0)),
        SynthClass("blower", 0, 260.0, (1.0, 0.5, 0.2, 0.25), 7.0, (3000.0, 3500.0)),
        SynthClass("blower", 1, 430.0, (0.8, 1.0, 0.3, 0.1), 11.0, (3800.0, 4300.0)),
    ]


def _harmonic_stack(t, f0, amps, phases):
    x = np.zeros_like(t)
    for k, (amp, phase) in enumerate(zip(amps, phases), start=1):
        x += amp * np.sin(2.0 * np.pi * f0 * k * t + phase)
    return x


def _band_noise(rng, n, sr, lo_hz, hi_hz):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    band = np.fft.irfft(spec, n)
    return band / (np.abs(band).max() + 1e-12)


def synth_clip(cls: SynthClass, rng: np.random.Generator, sr: int, n: int,
               anomaly_kind: str | None,
               alien_band: tuple[float, float] | None = None) -> np.ndarray:
    """One clip; anomalies inject a timed event on top of the normal model.

    band_noise places energy in ``alien_band`` (another machine's resonance
    region) so it contradicts the clip's own spectral identity.
    """
    t = np.arange(n) / sr
    f0 = cls.fundamental_hz * (1.0 + 0.01 * rng.uniform(-1.0, 1.0))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(cls.harmonic_amps))
    x = _harmonic_stack(t, f0, cls.harmonic_amps, phases)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    x *= 1.0 + 0.5 * np.sin(2.0 * np.pi * cls.am_rate_hz * t + am_phase)
    x += 0.25 * _band_noise(rng, n, sr, *cls.resonance_hz)
    x += 0.02 * rng.standard_normal(n)
    x *= 0.5 / np.abs(x).max()

    if anomaly_kind == "burst":
        # a rattle: periodic broadband impacts over a sustained window
        period = int(0.075 * sr)
        width = int(0.02 * sr)
        start = int(rng.integers(0, n - 10 * period))
        envelope = np.hanning(width)
        for j in range(8):
            s0 = start + j * period
            x[s0 : s0 + width] += 0.45 * envelope * rng.standard_normal(width)
    elif anomaly_kind == "harmonic_shift":
        shifted = _harmonic_stack(t, 1.15 * f0, cls.harmonic_amps, phases)
        shifted *= 0.5 / np.abs(shifted).max()
        width = int(0.6 * sr)
        start = int(rng.integers(0, n - width))
        blend = np.zeros(n)
        ramp = int(0.01 * sr)
        blend[start : start + width] = 1.0
        blend[start : start + ramp] = np.linspace(0.0, 1.0, ramp)
        blend[start + width - ramp : start + width] = np.linspace(1.0, 0.0, ramp)
        x = (1.0 - blend) * x + blend * shifted
    elif anomaly_kind == "band_noise":
        band = alien_band if alien_band is not None else cls.resonance_hz
        width = int(1.0 * sr)
        start = int(rng.integers(0, n - width))
        x[start : start + width] += 0.4 * _band_noise(
            rng, width, sr, *band
        ) * np.hanning(width)
    elif anomaly_kind is not None:
        raise CorpusError(f"unknown anomaly kind {anomaly_kind!r}")

    peak = np.abs(x).max()
    if peak > 0.98:
        x *= 0.98 / peak
    return x


def synth_generate(cfg: SynthConfig, out_dir,
                   classes: list[SynthClass] | None = None) -> list[ClipRecord]:
    """Write the corpus tree plus manifest.json; fully seeded and repeatable."""
    cfg.validate()
    classes = default_synth_classes() if classes is None else classes
    out_dir = Path(out_dir)
    n = int(round(cfg.clip_seconds * cfg.sample_rate))
    records: list[ClipRecord] = []
    for cls_idx, cls in enumerate(classes):
        plan = (
            [("train", "normal", i) for i in range(cfg.train_clips)]
            + [("test", "normal", i) for i in range(cfg.test_normal)]
            + [("test", "anomaly", i) for i in range(cfg.test_anomaly)]
        )
        for split, condition, idx in plan:
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    [cfg.seed, cls_idx, 0 if split == "train" else 1,
                     0 if condition == "normal" else 1, idx]
                )
            )
            kind = ANOMALY_KINDS[idx % len(ANOMALY_KINDS)] if condition == "anomaly" else None
            clip = synth_clip(cls, rng, cfg.sample_rate, n, kind)
            rel = Path(cls.machine_type) / split / f"{condition}_id_{cls.machine_id:02d}_{idx:08d}.wav"
            target = out_dir / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            write_wav(target, clip, cfg.sample_rate)
            records.append(
                ClipRecord(str(rel), cls.machine_type, cls.machine_id, condition, split)
            )
    write_manifest(records, out_dir / "manifest.json")
    return records
