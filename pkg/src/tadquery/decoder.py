"""Query decoder: relational self-attention, segment-bounded cross-attention, heads."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .config import ModelConfig, RaidConfig
from .geometry import clamped_bounds, pairwise_cosine, pairwise_iou
from .ndgrad import MLP, DiffArray, FeedForward, LayerNorm, Linear, Module, ops

SEGMENT_EPS = 1e-6
CLASS_PRIOR = 0.01


def build_relational_sets(features, segments, cfg: RaidConfig) -> np.ndarray:
    """Boolean attention mask over query pairs.

    Pairs qualify through feature similarity ``A > gamma`` and temporal
    overlap ``B < tau``. ``intersection`` mode keeps pairs satisfying both;
    ``verbatim`` mode keeps low-overlap pairs that are *not* similar. The
    diagonal is always kept. Computed on plain values, no gradient.
    """
    features = features.values if isinstance(features, DiffArray) else np.asarray(features, dtype=float)
    segments = segments.values if isinstance(segments, DiffArray) else np.asarray(segments, dtype=float)
    similar = pairwise_cosine(features) - cfg.gamma > 0
    low_overlap = pairwise_iou(segments) - cfg.tau < 0
    return relational_mask(similar, low_overlap, cfg.set_mode)


def relational_mask(similar: np.ndarray, low_overlap: np.ndarray, mode: str) -> np.ndarray:
    if mode == "intersection":
        mask = low_overlap & similar
    elif mode == "verbatim":
        mask = low_overlap & ~similar
    else:
        raise ValueError(f"unknown set mode {mode!r}")
    np.fill_diagonal(mask, True)
    return mask


def logit(p):
    p = np.clip(p, SEGMENT_EPS, 1.0 - SEGMENT_EPS)
    return np.log(p) - np.log1p(-p)


def refine_segment(prev, delta) -> DiffArray:
    """``sigmoid(logit(prev) + delta)`` per coordinate.

    ``prev`` enters through its values only when it is a plain array; pass
    a DiffArray to keep it in the graph (used for the first layer).
    """
    if isinstance(prev, DiffArray) and prev.requires_grad:
        p = ops.clip(prev, SEGMENT_EPS, 1.0 - SEGMENT_EPS)
        base = ops.log(p) - ops.log(1.0 - p)
    else:
        values = prev.values if isinstance(prev, DiffArray) else np.asarray(prev, dtype=float)
        base = logit(values)
    return ops.sigmoid(base + delta)


class RelationalAttention(Module):
    """Single-head attention restricted to a pair mask, residual + layer-norm."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)
        self.scale = 1.0 / np.sqrt(dim)

    def weights(self, q: DiffArray, mask: np.ndarray) -> DiffArray:
        logits = ops.matmul(self.query(q), ops.transpose(self.key(q))) * self.scale
        return ops.softmax_lastdim(logits, mask)

    def __call__(self, q: DiffArray, mask: np.ndarray):
        attn = self.weights(q, mask)
        return self.norm(q + ops.matmul(attn, self.value(q))), attn


class SegmentCrossAttention(Module):
    """Deformable cross-attention whose samples stay inside the reference segment.

    Offsets are squashed through a sigmoid and mapped onto the clamped
    segment span, so every sample position lies in ``[start, end]``.
    """

    def __init__(self, dim: int, ffn_dim: int, heads: int, points: int, rng: np.random.Generator):
        self.heads = heads
        self.points = points
        self.offsets = Linear(dim, heads * points, rng, zero=True)
        # spread the initial samples evenly over the segment; K=1 sits on the midpoint
        spread = logit((np.arange(points) + 0.5) / points)
        self.offsets.bias.values = np.tile(spread, heads)
        self.logits = Linear(dim, heads * points, rng, zero=True)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng)

    def sample(self, q: DiffArray, segments, values: DiffArray):
        """Returns (attended [L, D] before output projection, sample positions [L, H, K])."""
        n, dim = q.shape
        scale = float(values.shape[0] - 1)
        segments = segments if isinstance(segments, DiffArray) else DiffArray(segments)
        start, end = clamped_bounds(segments)
        hk = (n, self.heads, self.points)
        fraction = ops.sigmoid(ops.reshape(self.offsets(q), hk))
        span = ops.reshape((end - start) * scale, (n, 1, 1))
        positions = ops.reshape(start * scale, (n, 1, 1)) + span * fraction
        weights = ops.softmax_lastdim(ops.reshape(self.logits(q), hk))
        samples = ops.multihead_interp_gather(values, positions, self.heads, clamp=True)
        attended = ops.sum(samples * ops.reshape(weights, hk + (1,)), axis=2)
        return ops.reshape(attended, (n, dim)), positions.values

    def __call__(self, q: DiffArray, segments, values: DiffArray) -> DiffArray:
        attended, _ = self.sample(q, segments, values)
        q = self.norm(q + self.output(attended))
        return self.ffn(q)


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.hidden_dim
        self.relational = RelationalAttention(d, rng)
        self.cross = SegmentCrossAttention(d, cfg.ffn_dim, cfg.heads, cfg.points, rng)
        self.cls_head = MLP([d, d, d, cfg.num_classes], rng)
        self.cls_head.layers[-1].bias.values = np.full(cfg.num_classes, float(logit(CLASS_PRIOR)))
        self.reg_head = MLP([d, d, d, 2], rng, zero_last=True)
        self.quality_head = Linear(d, 2, rng)


@dataclass
class LayerOutput:
    logits: DiffArray  # [L, C]
    segments: DiffArray  # refined (m, d) [L, 2]
    quality: DiffArray  # sigmoid pair [L, 2]
    features: DiffArray  # layer output query features
    cross_input: DiffArray  # query features entering cross-attention
    reference: np.ndarray  # reference segments used by this layer
    values: DiffArray  # projected encoder memory for this layer
    mask: np.ndarray
    attention: DiffArray


@dataclass
class QueryState:
    layers: List[LayerOutput] = field(default_factory=list)

    @property
    def final(self) -> LayerOutput:
        return self.layers[-1]


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.query_embed = DiffArray(rng.normal(0.0, 0.02, size=(cfg.num_queries, cfg.hidden_dim)),
                                     requires_grad=True)
        self.reference = Linear(cfg.hidden_dim, 2, rng, zero=True)
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.dec_layers)]

    def initial_segments(self, queries: DiffArray) -> DiffArray:
        return ops.sigmoid(self.reference(queries))

    def __call__(self, encoded: DiffArray, raid: RaidConfig, use_raid: bool = True,
                 queries: Optional[DiffArray] = None) -> QueryState:
        q = self.query_embed if queries is None else queries
        reference = self.initial_segments(q)
        state = QueryState()
        n = q.shape[0]
        for layer in self.layers:
            if use_raid:
                mask = build_relational_sets(q.values, reference.values, raid)
            else:
                mask = np.ones((n, n), dtype=bool)
            q, attn = layer.relational(q, mask)
            cross_input = q
            values = layer.cross.value(encoded)
            q = layer.cross(q, reference, values)
            segments = refine_segment(reference, layer.reg_head(q))
            state.layers.append(LayerOutput(
                logits=layer.cls_head(q),
                segments=segments,
                quality=ops.sigmoid(layer.quality_head(q)),
                features=q,
                cross_input=cross_input,
                reference=reference.values,
                values=values,
                mask=mask,
                attention=attn,
            ))
            reference = segments.detach()
        return state

    def gt_branch(self, state: QueryState, query_index: np.ndarray, gt_segments: np.ndarray) -> List[DiffArray]:
        """Per-layer class logits of matched queries re-attending with ground-truth segments."""
        if len(query_index) == 0:
            return []
        out = []
        gt = DiffArray(np.asarray(gt_segments, dtype=float))
        for layer, result in zip(self.layers, state.layers):
            q = ops.index(result.cross_input, np.asarray(query_index))
            out.append(layer.cls_head(layer.cross(q, gt, result.values)))
        return out
