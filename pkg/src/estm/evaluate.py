"""Batch scoring and the per-machine AUC/pAUC evaluation protocol."""

from __future__ import annotations

import numpy as np

from .corpus import label_key
from .errors import LookupError_
from .metrics import EvalReport, aggregate, auc, pauc
from .model import EstmModel
from .train import ClipFeatures


def score_clips(model: EstmModel, clips: list[ClipFeatures],
                label_map: dict[str, int], batch_size: int = 64) -> np.ndarray:
    """Anomaly score per clip against its own machine-ID class."""
    dtype = model.store.dtype
    scores = np.empty(len(clips), dtype=np.float64)
    for lo in range(0, len(clips), batch_size):
        chunk = clips[lo : lo + batch_size]
        mel = np.stack([c.mel for c in chunk]).astype(dtype)
        emel = np.stack([c.emel for c in chunk]).astype(dtype)
        wave = np.stack([c.wave for c in chunk]).astype(dtype)
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, c in enumerate(chunk):
            key = label_key(c.record)
            if key not in label_map:
                raise LookupError_(f"machine ID {key!r} is not in the model's label map")
            labels[row] = label_map[key]
        scores[lo : lo + len(chunk)] = model.scores(mel, emel, wave, labels)
    return scores


def evaluate_clips(model: EstmModel, clips: list[ClipFeatures],
                   label_map: dict[str, int], p: float = 0.1,
                   batch_size: int = 64) -> tuple[EvalReport, np.ndarray]:
    """Scores plus the per-ID / per-type / average AUC and pAUC report.

    Clips with condition 'unknown' are scored but excluded from the metrics.
    """
    scores = score_clips(model, clips, label_map, batch_size)
    per_id: dict[tuple[str, int], dict[str, float]] = {}
    groups: dict[tuple[str, int], list[int]] = {}
    for i, c in enumerate(clips):
        if c.record.condition == "unknown":
            continue
        groups.setdefault((c.record.machine_type, c.record.machine_id), []).append(i)
    for key, idx in sorted(groups.items()):
        y = np.array([1 if clips[i].record.condition == "anomaly" else 0 for i in idx])
        s = scores[idx]
        per_id[key] = {"auc": auc(s, y), "pauc": pauc(s, y, p)}
    return aggregate(per_id), scores
