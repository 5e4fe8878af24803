"""Dataset preparation and the seeded training loop with checkpointing.

The static spectral channels of every clip are computed once up front; the
time-domain channel stays live inside the model so its frontend trains with
everything else.  Shuffling is a per-epoch Fisher-Yates permutation drawn
from a generator seeded by (seed, epoch), which keeps resumed runs aligned
with uninterrupted ones.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .corpus import ClipRecord, label_key, write_manifest  # noqa: F401
from .dsp import canonicalize, extract_static_channels, load_waveform, mel_filterbank
from .errors import ConfigError, LookupError_
from .model import EstmModel
from .optim import AdamW, clip_global_norm


@dataclass
class ClipFeatures:
    record: ClipRecord
    mel: np.ndarray   # (M, N)
    emel: np.ndarray  # (M, N)
    wave: np.ndarray  # (L,)


def prepare_clip(root, record: ClipRecord, feat_cfg, filterbank=None) -> ClipFeatures:
    wave = canonicalize(load_waveform(Path(root) / record.path, feat_cfg),
                        feat_cfg.clip_samples)
    mel, emel = extract_static_channels(wave, feat_cfg, filterbank)
    return ClipFeatures(record, mel, emel, wave.samples)


def prepare_dataset(root, records: list[ClipRecord], feat_cfg,
                    threads: int = 1) -> list[ClipFeatures]:
    filterbank = mel_filterbank(feat_cfg.sample_rate, feat_cfg.win, feat_cfg.mel_bins)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(
                lambda r: prepare_clip(root, r, feat_cfg, filterbank), records
            ))
    return [prepare_clip(root, r, feat_cfg, filterbank) for r in records]


def batch_arrays(clips: list[ClipFeatures], indices, label_map, dtype):
    mel = np.stack([clips[i].mel for i in indices]).astype(dtype)
    emel = np.stack([clips[i].emel for i in indices]).astype(dtype)
    wave = np.stack([clips[i].wave for i in indices]).astype(dtype)
    labels = np.empty(len(indices), dtype=np.int64)
    for row, i in enumerate(indices):
        key = label_key(clips[i].record)
        if key not in label_map:
            raise LookupError_(f"machine ID {key!r} is not in the model's label map")
        labels[row] = label_map[key]
    return mel, emel, wave, labels


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


@dataclass
class TrainResult:
    history: list[dict]
    best_checkpoint: str
    last_checkpoint: str


def _checkpoint_blobs(model: EstmModel, opt: AdamW, next_epoch: int,
                      best_loss: float) -> dict[str, np.ndarray]:
    blobs = {f"param/{k}": v for k, v in model.store.state_dict().items()}
    for k, v in opt.state_dict().items():
        blobs[f"opt/{k}"] = v
    blobs["meta/next_epoch"] = np.asarray(float(next_epoch))
    blobs["meta/best_loss"] = np.asarray(best_loss)
    return blobs


def _write_sidecars(path: Path, cfg: ExperimentConfig, label_map: dict) -> None:
    import json

    with open(str(path) + ".labels.json", "w") as fh:
        json.dump(label_map, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(str(path) + ".config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def train(clips: list[ClipFeatures], model: EstmModel, cfg: ExperimentConfig,
          out_dir, label_map: dict[str, int], resume: bool = False,
          progress=None) -> TrainResult:
    tcfg = cfg.train
    tcfg.validate()
    if not clips:
        raise ConfigError("training dataset is empty")
    classes = {label_key(c.record) for c in clips}
    if len(classes) < 2:
        raise ConfigError(f"training dataset has {len(classes)} class; need at least 2")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path = out_dir / "checkpoint_last.estm"
    best_path = out_dir / "checkpoint_best.estm"
    metrics_path = out_dir / "metrics.csv"
    digest = cfg.digest()

    opt = AdamW(model.store, tcfg)
    start_epoch = 0
    best_loss = float("inf")
    history: list[dict] = []

    if resume:
        blobs, ck_digest = load_checkpoint(last_path)
        if ck_digest != digest:
            raise ConfigError(
                f"{last_path}: checkpoint config digest does not match the current config"
            )
        model.store.load_state_dict(
            {k[len("param/"):]: v for k, v in blobs.items() if k.startswith("param/")}
        )
        opt.load_state_dict(
            {k[len("opt/"):]: v for k, v in blobs.items() if k.startswith("opt/")}
        )
        start_epoch = int(np.asarray(blobs["meta/next_epoch"]))
        best_loss = float(np.asarray(blobs["meta/best_loss"]))

    dtype = tcfg.dtype
    n = len(clips)

    for epoch in range(start_epoch, tcfg.epochs):
        t0 = time.perf_counter()
        order = _epoch_rng(tcfg.seed, epoch).permutation(n)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, tcfg.batch_size):
            idx = order[lo : lo + tcfg.batch_size]
            mel, emel, wave, labels = batch_arrays(clips, idx, label_map, dtype)
            model.store.zero_grad()
            features, logits = model.forward(mel, emel, wave)
            loss = model.arcface_loss(features, labels)
            ad.backward(loss)
            clip_global_norm(model.store, tcfg.grad_clip)
            opt.step()
            loss_sum += float(loss.data) * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
        model.store.check_finite_params()
        epoch_loss = loss_sum / n
        row = {
            "epoch": epoch,
            "loss": epoch_loss,
            "accuracy": correct / n,
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        if progress:
            progress(row)

        improved = epoch_loss < best_loss
        if improved:
            best_loss = epoch_loss
        blobs = _checkpoint_blobs(model, opt, epoch + 1, best_loss)
        save_checkpoint(last_path, blobs, digest)
        _write_sidecars(last_path, cfg, label_map)
        if improved:
            save_checkpoint(best_path, blobs, digest)
            _write_sidecars(best_path, cfg, label_map)
        _write_metrics_csv(metrics_path, cfg, history)

    return TrainResult(history=history,
                       best_checkpoint=str(best_path),
                       last_checkpoint=str(last_path))


def _write_metrics_csv(path, cfg: ExperimentConfig, history: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config: {cfg.canonical_json()}\n")
        fh.write("epoch,loss,accuracy,seconds\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['loss']:.8f},{row['accuracy']:.6f},{row['seconds']:.3f}\n"
            )


def load_model(checkpoint_path) -> tuple[EstmModel, dict[str, int], ExperimentConfig]:
    """Rebuild a model plus label map from a checkpoint and its sidecars."""
    import json

    from .config import config_from_dict

    blobs, digest = load_checkpoint(checkpoint_path)
    try:
        with open(str(checkpoint_path) + ".labels.json") as fh:
            label_map = {k: int(v) for k, v in json.load(fh).items()}
        with open(str(checkpoint_path) + ".config.json") as fh:
            cfg = config_from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"missing checkpoint sidecar: {exc.filename}") from exc
    if cfg.digest() != digest:
        raise ConfigError(
            f"{checkpoint_path}: config sidecar does not match the checkpoint digest"
        )
    model = EstmModel(cfg.model, cfg.features, n_classes=len(label_map),
                      seed=cfg.train.seed, dtype=cfg.train.dtype)
    model.store.load_state_dict(
        {k[len("param/"):]: v for k, v in blobs.items() if k.startswith("param/")}
    )
    return model, label_map, cfg
