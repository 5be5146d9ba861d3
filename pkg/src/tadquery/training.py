"""Seeded training loop, checkpoints, and window-level inference."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TextIO

import numpy as np

from .config import RunConfig, config_from_dict
from .data import SyntheticDataset, Video, WindowedSample, generate_dataset, window_dataset
from .inference import DetectionRecord, WindowPlacement, merge_windows, score_detections
from .model import QueryDetector, predict_window
from .ndgrad import AdamW, CheckpointError, DiffArray, load_checkpoint, save_checkpoint

FINAL_CHECKPOINT = "final"


class NumericError(FloatingPointError):
    """A loss component became NaN or infinite."""


@dataclass
class TrainResult:
    model: QueryDetector
    steps: int
    checkpoints: List[Path] = field(default_factory=list)
    history: List[dict] = field(default_factory=list)
    seconds: float = 0.0


def _check_finite(components: dict, step: int) -> None:
    # name the offending part before the total it contaminates
    for name, value in sorted(components.items(), key=lambda kv: kv[0] == "total"):
        if not math.isfinite(value):
            raise NumericError(f"step {step}: loss component '{name}' is {value}")


def save_model(path, model: QueryDetector, **extra) -> Path:
    return save_checkpoint(path, model.state_dict(), {"config": model.config.to_dict(), **extra})


def load_model(path, config: Optional[RunConfig] = None) -> QueryDetector:
    """Rebuild a detector from a checkpoint; ``config`` defaults to the embedded one."""
    state, manifest = load_checkpoint(path)
    if config is None:
        if "config" not in manifest:
            raise CheckpointError(f"{path}: no embedded config")
        config = config_from_dict(manifest["config"])
    model = QueryDetector(config, seed=config.train.seed)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint format {manifest.get('version')} does not fit the model: {exc}")
    return model


def batches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(count)
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def train(config: RunConfig, dataset: Optional[SyntheticDataset] = None, out_dir=None,
          log: Optional[TextIO] = None, on_step: Optional[Callable[[int, dict], None]] = None) -> TrainResult:
    """Train on the windows of the training split.

    Writes one ``key=value`` line per step to ``log``, a checkpoint per epoch
    under ``out_dir/checkpoints`` and ``out_dir/checkpoints/final`` with the
    config embedded. ``epochs = 0`` writes only the initial weights as final.
    """
    start = time.perf_counter()
    tc, dc = config.train, config.data
    dataset = dataset if dataset is not None else generate_dataset(dc)
    samples = window_dataset(dataset.split("train"), dc.window, dc.overlap, dc.min_coverage, training=True)
    rng = np.random.default_rng(tc.seed)
    model = QueryDetector(config, seed=tc.seed)
    optim = AdamW(model.named_parameters(), tc.lr, tc.betas, tc.eps, tc.weight_decay, tc.max_grad_norm)
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    result = TrainResult(model, 0)
    features = [DiffArray(s.features) for s in samples]
    step = 0
    done = tc.max_steps is not None and tc.max_steps == 0
    for epoch in range(1, tc.epochs + 1):
        if done:
            break
        for idx in batches(len(samples), tc.batch_size, rng):
            optim.zero_grad()
            loss, _ = model.batch_loss([features[i] for i in idx], [samples[i].targets for i in idx], rng)
            components = loss.components()
            _check_finite(components, step + 1)
            loss.total.backward()
            optim.step()
            step += 1
            record = {"epoch": epoch, "step": step, "grad_norm": float(optim.last_grad_norm), **components}
            result.history.append(record)
            if log is not None:
                log.write(loss.log_line(epoch=epoch, step=step, grad_norm=float(optim.last_grad_norm)) + "\n")
                log.flush()
            if on_step is not None:
                on_step(step, record)
            if tc.max_steps is not None and step >= tc.max_steps:
                done = True
                break
        if ckpt_dir is not None:
            result.checkpoints.append(save_model(ckpt_dir / f"epoch_{epoch:03d}", model, epoch=epoch, step=step))
    if ckpt_dir is not None:
        result.checkpoints.append(save_model(ckpt_dir / FINAL_CHECKPOINT, model, step=step))
    result.steps = step
    result.seconds = time.perf_counter() - start
    return result


def detect_windows(model: QueryDetector, windows: Sequence[WindowedSample]) -> List[DetectionRecord]:
    """Scored detections of every window in video seconds, before merging."""
    cfg = model.config
    records: List[DetectionRecord] = []
    for w in windows:
        logits, segments, quality = predict_window(model, w.features)
        place = WindowPlacement(w.video_id, w.origin, w.features.shape[0], w.valid, cfg.data.seconds_per_snippet)
        records.extend(score_detections(logits, segments, quality if cfg.ablation.quality else None, place,
                                        cfg.infer.top_n, cfg.infer.score_floor))
    return records


def infer(model: QueryDetector, videos: Sequence[Video]) -> List[DetectionRecord]:
    """Windows, decode, score, then merge per video with global Soft-NMS."""
    cfg = model.config
    windows = window_dataset(videos, cfg.data.window, cfg.data.overlap, cfg.data.min_coverage, training=False)
    return merge_windows(detect_windows(model, windows), cfg.infer.sigma, cfg.infer.prune_threshold)
