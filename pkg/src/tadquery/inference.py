"""From query outputs to per-video detections."""
from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .geometry import interval_iou

DETECTION_HEADER = "video_id\tstart_s\tend_s\tclass_id\tscore"


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    start: float  # seconds
    end: float
    class_id: int
    score: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"detection needs start < end, got [{self.start}, {self.end}]")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def with_score(self, score: float) -> "DetectionRecord":
        return DetectionRecord(self.video_id, self.start, self.end, self.class_id, float(score))


@dataclass(frozen=True)
class WindowPlacement:
    """Where a window sits in its video.

    Window-normalized ``u`` maps to ``(origin + u * (length - 1)) * seconds_per_snippet``;
    ``valid`` counts the real (unpadded) snippets.
    """

    video_id: str
    origin: int
    length: int
    valid: int
    seconds_per_snippet: float

    def to_seconds(self, u: np.ndarray) -> np.ndarray:
        frames = np.clip(np.asarray(u, dtype=float), 0.0, 1.0) * (self.length - 1)
        frames = np.minimum(frames, self.valid - 1)
        return (self.origin + frames) * self.seconds_per_snippet


def score_detections(logits: np.ndarray, segments: np.ndarray, quality: np.ndarray | None,
                     window: WindowPlacement, top_n: int = 100, score_floor: float = 1e-4) -> List[DetectionRecord]:
    """Score every (query, class) pair and keep the best ``top_n`` above the floor.

    ``score = sigmoid(logit) * zeta_1 * zeta_2``; pass ``quality=None`` for
    ``zeta = (1, 1)``. Ties are broken by query, then class index.
    """
    logits = np.asarray(logits, dtype=float)
    segments = np.asarray(segments, dtype=float).reshape(-1, 2)
    n, c = logits.shape
    zeta = np.ones(n) if quality is None else np.prod(np.asarray(quality, dtype=float).reshape(n, 2), axis=1)
    scores = np.clip(expit(logits) * zeta[:, None], 0.0, 1.0)
    flat = scores.reshape(-1)
    order = np.lexsort((np.arange(flat.size), -flat))
    order = [i for i in order if flat[i] > score_floor][:top_n]
    half = segments[:, 1] / 2.0
    starts = window.to_seconds(segments[:, 0] - half)
    ends = window.to_seconds(segments[:, 0] + half)
    out = []
    for i in order:
        q, cls = divmod(int(i), c)
        if ends[q] > starts[q]:
            out.append(DetectionRecord(window.video_id, float(starts[q]), float(ends[q]), cls, float(flat[i])))
    return out


def soft_nms(records: Sequence[DetectionRecord], sigma: float = 0.5,
             prune_threshold: float = 1e-3) -> List[DetectionRecord]:
    """Gaussian Soft-NMS over records of one (video, class).

    Repeatedly selects the highest remaining score (earliest input on ties)
    and multiplies every other remaining score by ``exp(-iou^2 / sigma)``.
    Stops once the best remaining score falls below ``prune_threshold``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not records:
        return []
    bounds = np.array([[r.start, r.end] for r in records])
    scores = np.array([r.score for r in records], dtype=float)
    remaining = np.ones(len(records), dtype=bool)
    selected: List[DetectionRecord] = []
    while remaining.any():
        candidates = np.flatnonzero(remaining)
        best = candidates[np.argmax(scores[candidates])]
        if scores[best] < prune_threshold:
            break
        selected.append(records[best].with_score(scores[best]))
        remaining[best] = False
        rest = np.flatnonzero(remaining)
        if rest.size:
            overlap = interval_iou(bounds[best][None, :], bounds[rest])
            scores[rest] *= np.exp(-(overlap ** 2) / sigma)
    return selected


def _sort_key(r: DetectionRecord) -> Tuple:
    return (r.video_id, -r.score, r.start, r.end, r.class_id)


def merge_windows(records: Iterable[DetectionRecord], sigma: float = 0.5,
                  prune_threshold: float = 1e-3) -> List[DetectionRecord]:
    """Global Soft-NMS per (video, class) over detections already in video seconds."""
    groups: Dict[Tuple[str, int], List[DetectionRecord]] = defaultdict(list)
    for r in records:
        groups[(r.video_id, r.class_id)].append(r)
    merged = []
    for key in sorted(groups):
        ranked = sorted(groups[key], key=_sort_key)
        merged.extend(soft_nms(ranked, sigma, prune_threshold))
    return sorted(merged, key=_sort_key)


def format_detections(records: Iterable[DetectionRecord]) -> str:
    buf = io.StringIO()
    buf.write(DETECTION_HEADER + "\n")
    for r in records:
        buf.write(f"{r.video_id}\t{r.start:.6f}\t{r.end:.6f}\t{r.class_id}\t{r.score:.6f}\n")
    return buf.getvalue()


def write_detections(path, records: Iterable[DetectionRecord]) -> None:
    Path(path).write_text(format_detections(records))


def read_detections(path) -> List[DetectionRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != DETECTION_HEADER:
        raise ValueError(f"{path}: missing detection header")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{n}: expected 5 tab-separated fields")
        vid, start, end, cls, score = parts
        out.append(DetectionRecord(vid, float(start), float(end), int(cls), float(score)))
    return out
