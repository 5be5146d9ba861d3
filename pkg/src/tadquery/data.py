"""Synthetic untrimmed videos, sliding windows, and their on-disk form.

Actions are integer snippet spans ``[a, b]`` (both ends inclusive, so at
least two snippets); snippet ``i`` sits at ``i * seconds_per_snippet``
seconds. A window with origin ``o`` and length ``W`` covers snippets
``o .. o + W - 1`` and maps snippet ``x`` to ``(x - o) / (W - 1)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .config import DataConfig
from .evaluation import GroundTruthRecord
from .losses import ClipTargets

logger = logging.getLogger(__name__)

RAMP = (1.0 / 3.0, 2.0 / 3.0)  # onset weights; the offset mirrors them
PLACEMENT_ATTEMPTS = 1000
DATASET_FORMAT = "tadquery-dataset"
DATASET_VERSION = 1
COVERAGE_SLACK = 1e-9


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ActionSpan:
    start: int
    end: int  # inclusive
    class_id: int

    def seconds(self, seconds_per_snippet: float) -> Tuple[float, float]:
        return self.start * seconds_per_snippet, self.end * seconds_per_snippet


@dataclass
class Video:
    video_id: str
    features: np.ndarray  # [T, D'], float32-representable
    actions: List[ActionSpan]
    split: str = "train"

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass
class SyntheticDataset:
    videos: List[Video]
    prototypes: np.ndarray  # [C, D']
    spec: DataConfig

    def split(self, name: str) -> List[Video]:
        return [v for v in self.videos if v.split == name]

    def ground_truths(self, split: str | None = None) -> List[GroundTruthRecord]:
        sps = self.spec.seconds_per_snippet
        out = []
        for v in self.videos:
            if split is None or v.split == split:
                for a in v.actions:
                    start, end = a.seconds(sps)
                    out.append(GroundTruthRecord(v.video_id, start, end, a.class_id))
        return out


def make_prototypes(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Class prototypes with norm sqrt(dim); orthogonal when ``num_classes <= dim``."""
    draws = rng.normal(size=(dim, num_classes))
    if num_classes <= dim:
        q, r = np.linalg.qr(draws)
        directions = (q * np.sign(np.diag(r))).T
    else:
        directions = (draws / np.linalg.norm(draws, axis=0)).T
    # float32-representable so stored features can equal them exactly
    return (directions * np.sqrt(dim)).astype(np.float32).astype(np.float64)


def _place_actions(count: int, lengths: np.ndarray, total: int, rng: np.random.Generator):
    """Start indices for non-overlapping spans whose ramps do not touch, or None."""
    margin = len(RAMP)
    for _ in range(PLACEMENT_ATTEMPTS):
        starts = np.array([rng.integers(0, total - lengths[i] + 1) for i in range(count)])
        order = np.argsort(starts, kind="stable")
        ok = True
        for prev, nxt in zip(order[:-1], order[1:]):
            # prev's offset ramp and nxt's onset ramp need disjoint snippets
            if starts[nxt] - (starts[prev] + lengths[prev] - 1) <= 2 * margin:
                ok = False
                break
        if ok:
            return starts
    return None


def _video(index: int, spec: DataConfig, prototypes: np.ndarray, rng: np.random.Generator) -> Video:
    total, dim = spec.snippets_per_video, spec.feature_dim
    count = int(rng.integers(spec.min_actions, spec.max_actions + 1))
    fractions = rng.uniform(spec.min_duration, spec.max_duration, size=count)
    lengths = np.clip(np.round(fractions * total).astype(int), 2, total)
    classes = rng.integers(0, spec.num_classes, size=count)
    starts = _place_actions(count, lengths, total, rng)
    while starts is None and count > 1:
        logger.warning("video %d: cannot place %d actions without overlap; trying %d", index, count, count - 1)
        count -= 1
        lengths, classes = lengths[:count], classes[:count]
        starts = _place_actions(count, lengths, total, rng)
    if starts is None:
        raise DatasetError(f"video {index}: a single action of {lengths[0]} snippets does not fit")
    features = rng.normal(size=(total, dim))
    actions = []
    for s, n, c in sorted(zip(starts.tolist(), lengths.tolist(), classes.tolist())):
        a, b = s, s + n - 1
        span = prototypes[c] + spec.noise_std * rng.normal(size=(n, dim))
        features[a:b + 1] = span
        for k, r in enumerate(RAMP):
            onset, offset = a - len(RAMP) + k, b + len(RAMP) - k
            for i in (onset, offset):
                if 0 <= i < total:
                    action = prototypes[c] + spec.noise_std * rng.normal(size=dim)
                    features[i] = r * action + (1.0 - r) * features[i]
        actions.append(ActionSpan(a, b, int(c)))
    features = features.astype(np.float32).astype(np.float64)
    return Video(f"video_{index:04d}", features, actions)


def generate_dataset(spec: DataConfig) -> SyntheticDataset:
    """Seeded videos with planted actions and an 80/20-style split by video."""
    rng = np.random.default_rng(spec.seed)
    prototypes = make_prototypes(spec.num_classes, spec.feature_dim, rng)
    videos = [_video(i, spec, prototypes, rng) for i in range(spec.num_videos)]
    n_val = int(round(spec.val_fraction * spec.num_videos))
    if spec.num_videos > 1:
        n_val = min(max(n_val, 1 if spec.val_fraction > 0 else 0), spec.num_videos - 1)
    else:
        n_val = 0
    for i in rng.permutation(spec.num_videos)[:n_val]:
        videos[int(i)].split = "val"
    return SyntheticDataset(videos, prototypes, spec)


# ------------------------------------------------------------------ windows

@dataclass
class WindowedSample:
    video_id: str
    origin: int
    features: np.ndarray  # [W, D']
    valid: int  # real snippets; the rest is zero padding
    targets: ClipTargets
    spans: List[ActionSpan] = field(default_factory=list)  # retained gts in video snippets

    @property
    def padded(self) -> bool:
        return self.valid < self.features.shape[0]


def window_origins(length: int, window: int, overlap: int) -> List[int]:
    """Stride ``window - overlap``; a final window is aligned to the video end when needed."""
    if length <= window:
        return [0]
    stride = window - overlap
    origins = list(range(0, length - window + 1, stride))
    if origins[-1] + window < length:
        origins.append(length - window)
    return origins


def to_window(start: float, end: float, origin: int, window: int) -> Tuple[float, float]:
    scale = float(window - 1)
    return (start - origin) / scale, (end - origin) / scale


def from_window(u_start: float, u_end: float, origin: int, window: int) -> Tuple[float, float]:
    scale = float(window - 1)
    return origin + u_start * scale, origin + u_end * scale


def window_video(video: Video, window: int, overlap: int, min_coverage: float = 0.75,
                 training: bool = False) -> List[WindowedSample]:
    samples = []
    for origin in window_origins(video.length, window, overlap):
        chunk = video.features[origin:origin + window]
        valid = chunk.shape[0]
        if valid < window:
            chunk = np.concatenate([chunk, np.zeros((window - valid, chunk.shape[1]))])
        last = origin + window - 1
        segs, classes, kept = [], [], []
        for a in video.actions:
            lo, hi = max(a.start, origin), min(a.end, last)
            if hi <= lo:
                continue
            if (hi - lo) / (a.end - a.start) < min_coverage - COVERAGE_SLACK:
                continue
            u0, u1 = to_window(lo, hi, origin, window)
            segs.append(((u0 + u1) / 2.0, u1 - u0))
            classes.append(a.class_id)
            kept.append(a)
        if training and not segs:
            continue
        samples.append(WindowedSample(video.video_id, origin, chunk, valid,
                                      ClipTargets(np.array(segs).reshape(-1, 2), classes), kept))
    return samples


def window_dataset(videos: Sequence[Video], window: int = 256, overlap: int = 192,
                   min_coverage: float = 0.75, training: bool = False) -> List[WindowedSample]:
    """Sliding windows over every video; training drops windows without ground truth."""
    out = []
    for v in videos:
        out.extend(window_video(v, window, overlap, min_coverage, training))
    return out


# ------------------------------------------------------------------- disk

def save_dataset(directory, dataset: SyntheticDataset) -> Path:
    """Manifest JSON plus one little-endian float32 blob per video."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in dataset.videos:
        blob = f"{v.video_id}.f32"
        (directory / blob).write_bytes(v.features.astype("<f4").tobytes())
        entries.append({
            "video_id": v.video_id, "split": v.split, "length": v.length, "blob": blob,
            "actions": [{"start": a.start, "end": a.end, "class_id": a.class_id} for a in v.actions],
        })
    manifest = {
        "format": DATASET_FORMAT, "version": DATASET_VERSION,
        "spec": dataset.spec.model_dump(mode="json"),
        "feature_dim": dataset.spec.feature_dim,
        "prototypes": dataset.prototypes.tolist(),
        "videos": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_dataset(directory) -> SyntheticDataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise DatasetError(f"no dataset manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != DATASET_FORMAT or manifest.get("version") != DATASET_VERSION:
        raise DatasetError(f"{path}: unsupported dataset format {manifest.get('format')}/{manifest.get('version')}")
    spec = DataConfig.model_validate(manifest["spec"])
    dim = int(manifest["feature_dim"])
    videos = []
    for e in manifest["videos"]:
        raw = np.frombuffer((directory / e["blob"]).read_bytes(), dtype="<f4")
        if raw.size != e["length"] * dim:
            raise DatasetError(f"{e['blob']}: expected {e['length']}x{dim} floats, found {raw.size}")
        actions = [ActionSpan(int(a["start"]), int(a["end"]), int(a["class_id"])) for a in e["actions"]]
        videos.append(Video(e["video_id"], raw.reshape(e["length"], dim).astype(np.float64), actions, e["split"]))
    return SyntheticDataset(videos, np.asarray(manifest["prototypes"], dtype=float), spec)
