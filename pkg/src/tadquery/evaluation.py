"""Multi-threshold temporal mAP."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .geometry import interval_iou
from .inference import DetectionRecord

DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
NO_GT = "no-gt"


@dataclass(frozen=True)
class GroundTruthRecord:
    video_id: str
    start: float  # seconds
    end: float
    class_id: int


def average_precision(is_tp: np.ndarray, num_gts: int) -> float:
    """All-point interpolated AP of a ranked TP/FP sequence."""
    if num_gts <= 0:
        raise ValueError("AP is undefined without ground truths")
    if len(is_tp) == 0:
        return 0.0
    tp = np.cumsum(is_tp, dtype=float)
    fp = np.cumsum(~np.asarray(is_tp, dtype=bool), dtype=float)
    recall = tp / num_gts
    precision = tp / (tp + fp)
    rec = np.concatenate([[0.0], recall, [1.0]])
    prec = np.concatenate([[0.0], precision, [0.0]])
    prec = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.flatnonzero(rec[1:] != rec[:-1]) + 1
    return float(np.sum((rec[steps] - rec[steps - 1]) * prec[steps]))


def greedy_match(detections: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord],
                 threshold: float) -> np.ndarray:
    """TP flags for ``detections`` (already ranked) of one class.

    Each detection takes the highest-IoU unmatched gt of its video with
    IoU >= ``threshold`` (lowest gt index on ties).
    """
    by_video: Dict[str, List[int]] = defaultdict(list)
    for i, g in enumerate(gts):
        by_video[g.video_id].append(i)
    bounds = np.array([[g.start, g.end] for g in gts]).reshape(-1, 2)
    used = np.zeros(len(gts), dtype=bool)
    flags = np.zeros(len(detections), dtype=bool)
    for k, det in enumerate(detections):
        cands = [i for i in by_video.get(det.video_id, ()) if not used[i]]
        if not cands:
            continue
        overlaps = interval_iou(np.array([det.start, det.end]), bounds[cands])
        j = int(np.argmax(overlaps))
        if overlaps[j] >= threshold:
            used[cands[j]] = True
            flags[k] = True
    return flags


def _rank(detections: Iterable[DetectionRecord]) -> List[DetectionRecord]:
    return sorted(detections, key=lambda r: (-r.score, r.video_id, r.start, r.end))


@dataclass
class EvalReport:
    thresholds: List[float]
    per_class_ap: Dict[int, Dict[float, Optional[float]]]  # None: class has no gt
    map_per_threshold: Dict[float, Optional[float]]
    average_map: Optional[float]
    num_gts: int
    num_detections: int
    gts_per_class: Dict[int, int] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return NO_GT if self.average_map is None else "ok"

    def to_dict(self) -> dict:
        def key(t):
            return f"{t:.2f}"

        def val(v):
            return NO_GT if v is None else v

        return {
            "status": self.status,
            "thresholds": list(self.thresholds),
            "average_map": val(self.average_map),
            "map_per_threshold": {key(t): val(v) for t, v in self.map_per_threshold.items()},
            "per_class_ap": {str(c): {key(t): val(v) for t, v in aps.items()}
                             for c, aps in sorted(self.per_class_ap.items())},
            "num_gts": self.num_gts,
            "num_detections": self.num_detections,
            "gts_per_class": {str(c): n for c, n in sorted(self.gts_per_class.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        def val(v):
            return None if v == NO_GT else float(v)

        thresholds = [float(t) for t in data["thresholds"]]
        return cls(
            thresholds=thresholds,
            per_class_ap={int(c): {float(t): val(v) for t, v in aps.items()}
                          for c, aps in data["per_class_ap"].items()},
            map_per_threshold={float(t): val(v) for t, v in data["map_per_threshold"].items()},
            average_map=val(data["average_map"]),
            num_gts=int(data["num_gts"]),
            num_detections=int(data["num_detections"]),
            gts_per_class={int(c): int(n) for c, n in data.get("gts_per_class", {}).items()},
        )

    def table(self) -> str:
        """Text table with one column per threshold plus the average."""
        heads = [f"{t:.1f}" for t in self.thresholds] + ["Avg."]
        cells = [self.map_per_threshold[t] for t in self.thresholds] + [self.average_map]
        fmt = [NO_GT if v is None else f"{v:.4f}" for v in cells]
        width = max(6, *(len(x) for x in fmt))
        lines = ["tIoU  " + " ".join(h.rjust(width) for h in heads),
                 "mAP   " + " ".join(x.rjust(width) for x in fmt)]
        return "\n".join(lines)


def save_report(path, report: EvalReport) -> None:
    Path(path).write_text(report.to_json() + "\n")


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def evaluate_map(detections: Iterable[DetectionRecord], ground_truths: Iterable[GroundTruthRecord],
                 thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> EvalReport:
    """Per-class AP at each threshold; mAP averages classes that have ground truth.

    With no ground truth at all every mAP is reported as the ``no-gt`` marker.
    """
    thresholds = [float(t) for t in thresholds]
    detections = list(detections)
    gts = list(ground_truths)
    det_by_class: Dict[int, List[DetectionRecord]] = defaultdict(list)
    gt_by_class: Dict[int, List[GroundTruthRecord]] = defaultdict(list)
    for d in detections:
        det_by_class[d.class_id].append(d)
    for g in gts:
        gt_by_class[g.class_id].append(g)
    classes = sorted(set(det_by_class) | set(gt_by_class))
    per_class: Dict[int, Dict[float, Optional[float]]] = {}
    for c in classes:
        ranked = _rank(det_by_class.get(c, []))
        cgts = gt_by_class.get(c, [])
        per_class[c] = {
            t: (average_precision(greedy_match(ranked, cgts, t), len(cgts)) if cgts else None)
            for t in thresholds
        }
    scored = [c for c in classes if gt_by_class.get(c)]
    map_per: Dict[float, Optional[float]] = {
        t: (float(np.mean([per_class[c][t] for c in scored])) if scored else None) for t in thresholds
    }
    average = float(np.mean(list(map_per.values()))) if scored else None
    return EvalReport(thresholds, per_class, map_per, average, len(gts), len(detections),
                      {c: len(v) for c, v in gt_by_class.items()})
