"""ROC area metrics and per-machine aggregation.

``auc`` uses the rank (pairwise-win) formulation with half credit for ties;
``pauc`` integrates the tie-grouped ROC polyline over false-positive rates
[0, p] with linear interpolation at the boundary, normalized by p.  Both
keep their numerators in exact integer/half-integer arithmetic so that
pauc(p=1) equals auc bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MetricUndefinedError


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricUndefinedError("scores and labels must be 1-D and equal length")
    npos = int(np.sum(labels == 1))
    nneg = int(np.sum(labels == 0))
    if npos + nneg != labels.size:
        raise MetricUndefinedError("labels must be binary (0 = normal, 1 = anomaly)")
    if npos == 0 or nneg == 0:
        raise MetricUndefinedError(
            f"need at least one anomaly and one normal (got {npos} / {nneg})"
        )
    return scores, labels, npos, nneg


def auc(scores, labels) -> float:
    """Probability a random anomaly outscores a random normal; ties count 0.5."""
    scores, labels, npos, nneg = _validate(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    credit = float(ranks[labels == 1].sum()) - 0.5 * npos * (npos + 1)
    return credit / (npos * nneg)


def _roc_vertices(scores, labels):
    """Tie-grouped ROC vertices as integer (false-positive, true-positive) counts."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    lab = labels[order]
    fp = [0]
    tp = [0]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        group = lab[i : j + 1]
        tp.append(tp[-1] + int(np.sum(group == 1)))
        fp.append(fp[-1] + int(np.sum(group == 0)))
        i = j + 1
    return fp, tp


def pauc(scores, labels, p: float = 0.1) -> float:
    """ROC area restricted to false-positive rate [0, p], normalized by p."""
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"partial-AUC ceiling p must be in (0, 1], got {p}")
    scores, labels, npos, nneg = _validate(scores, labels)
    fp, tp = _roc_vertices(scores, labels)
    target_fp = p * nneg
    area2 = 0  # twice the unnormalized area, integer-exact inside the range
    partial2 = 0.0
    for i in range(len(fp) - 1):
        if fp[i + 1] <= target_fp:
            area2 += (tp[i] + tp[i + 1]) * (fp[i + 1] - fp[i])
        else:
            if target_fp > fp[i]:
                frac = (target_fp - fp[i]) / (fp[i + 1] - fp[i])
                tp_cross = tp[i] + (tp[i + 1] - tp[i]) * frac
                partial2 = (tp[i] + tp_cross) * (target_fp - fp[i])
            break
    area = (area2 + partial2) / (2.0 * npos * nneg)
    return area / p


@dataclass
class EvalReport:
    per_id: dict[tuple[str, int], dict[str, float]]
    per_type: dict[str, dict[str, float]]
    average: dict[str, float]


def aggregate(per_id_metrics: dict[tuple[str, int], dict[str, float]]) -> EvalReport:
    """Mean per machine type over its IDs, then the arithmetic mean over types."""
    per_type: dict[str, dict[str, float]] = {}
    types = sorted({t for t, _ in per_id_metrics})
    for t in types:
        rows = [m for (tt, _), m in sorted(per_id_metrics.items()) if tt == t]
        per_type[t] = {
            "auc": float(np.mean([r["auc"] for r in rows])),
            "pauc": float(np.mean([r["pauc"] for r in rows])),
        }
    average = {
        "auc": float(np.mean([per_type[t]["auc"] for t in types])),
        "pauc": float(np.mean([per_type[t]["pauc"] for t in types])),
    }
    return EvalReport(per_id=dict(per_id_metrics), per_type=per_type, average=average)


def report_to_csv(report: EvalReport, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["machine_type", "machine_id", "auc", "pauc"])
        for (t, i), m in sorted(report.per_id.items()):
            writer.writerow([t, i, f"{m['auc']:.6f}", f"{m['pauc']:.6f}"])


def report_to_json(report: EvalReport, path, config_echo: dict | None = None) -> None:
    payload = {
        "per_type": report.per_type,
        "average": report.average,
        "per_id": {f"{t}/{i}": m for (t, i), m in sorted(report.per_id.items())},
    }
    if config_echo is not None:
        payload["config"] = config_echo
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
