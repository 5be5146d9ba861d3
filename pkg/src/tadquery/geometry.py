"""Interval math on window-normalized (midpoint, duration) segments.

Segments are stored as ``(m, d)``; the endpoint view ``[m - d/2, m + d/2]``
is derived on demand and clamped to ``[0, 1]`` for overlap measures only.
Functions accept :class:`TemporalSegment`, plain ``[..., 2]`` arrays or
:class:`DiffArray` and return a float, an ndarray or a DiffArray to match.
"""
from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .ndgrad import ContractError, DiffArray, no_grad, ops

ROI_BINS = 8


@dataclass(frozen=True)
class TemporalSegment:
    midpoint: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ContractError(f"segment duration must be positive, got {self.duration}")

    @property
    def start(self) -> float:
        return self.midpoint - self.duration / 2.0

    @property
    def end(self) -> float:
        return self.midpoint + self.duration / 2.0

    def clamped(self) -> Tuple[float, float]:
        return max(self.start, 0.0), min(self.end, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.midpoint, self.duration])

    @classmethod
    def from_bounds(cls, start: float, end: float) -> "TemporalSegment":
        return cls((start + end) / 2.0, end - start)


@dataclass(frozen=True)
class GroundTruthAction:
    segment: TemporalSegment
    class_id: int

    def validate(self, num_classes: int) -> None:
        if not 0 <= self.class_id < num_classes:
            raise ContractError(f"class id {self.class_id} outside [0, {num_classes})")


SegmentLike = Union[TemporalSegment, np.ndarray, DiffArray, Sequence[float]]


def _to_diff(seg) -> Tuple[DiffArray, str]:
    if isinstance(seg, DiffArray):
        return seg, "diff"
    if isinstance(seg, TemporalSegment):
        return DiffArray(seg.as_array()), "scalar"
    if isinstance(seg, (list, tuple)) and seg and isinstance(seg[0], TemporalSegment):
        return DiffArray(np.stack([s.as_array() for s in seg])), "array"
    return DiffArray(np.asarray(seg, dtype=np.float64)), "array"


def _check_durations(seg: DiffArray) -> None:
    if np.any(seg.values[..., 1] <= 0):
        raise ContractError("segment duration must be positive")


def _wrap(result: DiffArray, kinds) -> Union[float, np.ndarray, DiffArray]:
    if "diff" in kinds:
        return result
    if all(k == "scalar" for k in kinds):
        return float(result.values)
    return result.values


def clamped_bounds(seg: DiffArray) -> Tuple[DiffArray, DiffArray]:
    """Differentiable clamped endpoints of ``[..., 2]`` segments."""
    mid, dur = seg[..., 0], seg[..., 1]
    half = dur * 0.5
    return ops.clip(mid - half, 0.0, 1.0), ops.clip(mid + half, 0.0, 1.0)


def _overlap_terms(a: DiffArray, b: DiffArray):
    s1, e1 = clamped_bounds(a)
    s2, e2 = clamped_bounds(b)
    overlap = ops.minimum(e1, e2) - ops.maximum(s1, s2)
    inter = ops.relu(overlap)
    union = (e1 - s1) + (e2 - s2) - inter
    return s1, e1, s2, e2, overlap, inter, union


def iou(a: SegmentLike, b: SegmentLike):
    """Temporal IoU of clamped intervals (broadcasts over leading axes)."""
    (da, ka), (db, kb) = _to_diff(a), _to_diff(b)
    _check_durations(da)
    _check_durations(db)
    grad_ctx = no_grad() if "diff" not in (ka, kb) else nullcontext()
    with grad_ctx:
        *_, inter, union = _overlap_terms(da, db)
        out = inter / union
    return _wrap(out, (ka, kb))


def giou(a: SegmentLike, b: SegmentLike):
    """IoU minus the fraction of the enclosing hull covered by neither segment."""
    (da, ka), (db, kb) = _to_diff(a), _to_diff(b)
    _check_durations(da)
    _check_durations(db)
    grad_ctx = no_grad() if "diff" not in (ka, kb) else nullcontext()
    with grad_ctx:
        s1, e1, s2, e2, overlap, inter, union = _overlap_terms(da, db)
        hull = ops.maximum(e1, e2) - ops.minimum(s1, s2)
        # the uncovered part of the hull is the gap between disjoint segments;
        # computing it directly keeps it exactly 0 when they overlap
        gap = ops.relu(-overlap)
        out = inter / union - gap / hull
    return _wrap(out, (ka, kb))


def pairwise_iou(segments: SegmentLike):
    """``B[i, j] = iou(s_i, s_j)`` for ``[L, 2]`` segments."""
    seg, kind = _to_diff(segments)
    if seg.ndim != 2 or seg.shape[0] < 1:
        raise ContractError(f"pairwise_iou needs [L, 2] segments, got {seg.shape}")
    l = seg.shape[0]
    rows = ops.reshape(seg, (l, 1, 2))
    cols = ops.reshape(seg, (1, l, 2))
    return iou(rows if kind == "diff" else rows.values, cols if kind == "diff" else cols.values)


def pairwise_cosine(features) -> Union[np.ndarray, DiffArray]:
    """``A[i, j]`` cosine similarity of feature rows (norm guarded by 1e-8)."""
    is_diff = isinstance(features, DiffArray)
    x = features if is_diff else DiffArray(np.asarray(features, dtype=np.float64))
    unit = ops.l2_normalize(x, eps=1e-8)
    out = ops.matmul(unit, ops.transpose(unit))
    return out if is_diff else out.values


def segment_to_frames(segment: SegmentLike, length: int) -> Tuple[float, float]:
    """Window-normalized segment to frame coordinates via ``t * (T - 1)``."""
    if length < 2:
        raise ContractError("window length must be at least 2")
    seg = segment if isinstance(segment, TemporalSegment) else TemporalSegment(*np.asarray(segment, dtype=float))
    scale = length - 1
    return seg.start * scale, seg.end * scale


def frames_to_segment(start_frame: float, end_frame: float, length: int) -> TemporalSegment:
    if length < 2:
        raise ContractError("window length must be at least 2")
    scale = float(length - 1)
    return TemporalSegment.from_bounds(start_frame / scale, end_frame / scale)


def roi_pool(features, segment: SegmentLike, bins: int = ROI_BINS) -> DiffArray:
    """Mean of ``bins`` interpolated samples evenly spanning the clamped segment."""
    if bins < 1:
        raise ContractError("roi_pool needs at least one bin")
    features = features if isinstance(features, DiffArray) else DiffArray(features)
    seg, _ = _to_diff(segment)
    _check_durations(seg)
    scale = float(features.shape[0] - 1)
    start, end = clamped_bounds(seg)
    if (end.values - start.values) * scale < 1.0:
        centre = (start.values + end.values) / 2.0 * scale
        positions = DiffArray(np.full(bins, float(np.clip(np.round(centre), 0, scale))))
    elif bins == 1:
        positions = ops.reshape((start + end) * (0.5 * scale), (1,))
    else:
        fractions = np.linspace(0.0, 1.0, bins)
        positions = (ops.reshape(start, (1,)) + ops.reshape(end - start, (1,)) * fractions) * scale
    samples = ops.linear_interp_gather(features, positions, clamp=True)
    return ops.mean(samples, axis=0)


def interval_iou(a, b) -> np.ndarray:
    """IoU of raw ``[..., 2]`` (start, end) intervals, any units, no clamping."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter = np.maximum(np.minimum(a[..., 1], b[..., 1]) - np.maximum(a[..., 0], b[..., 0]), 0.0)
    union = (a[..., 1] - a[..., 0]) + (b[..., 1] - b[..., 0]) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
