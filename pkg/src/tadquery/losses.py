"""Training objectives for the query detector."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import AblationConfig, LossConfig
from .decoder import Decoder, QueryState
from .geometry import giou, iou, pairwise_iou, roi_pool
from .matching import MatchResult, hungarian_match, match_cost
from .ndgrad import DiffArray, ops

logger = logging.getLogger(__name__)


@dataclass
class ClipTargets:
    """Ground truth of one window: ``segments`` [K, 2] as (m, d), ``classes`` [K]."""

    segments: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 2)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)

    def __len__(self) -> int:
        return len(self.classes)


def focal_loss(logits: DiffArray, targets, alpha: float = 0.25, gamma: float = 2.0,
               normalizer: float = 1.0) -> DiffArray:
    """Sigmoid focal loss summed over rows and class channels, divided by ``normalizer``.

    ``targets`` holds a class index per row, or -1 for background.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    onehot = np.zeros((n, c))
    fg = targets >= 0
    onehot[np.nonzero(fg)[0], targets[fg]] = 1.0
    prob = ops.sigmoid(logits)
    ce = ops.softplus(logits) - logits * onehot
    miss = prob + onehot - prob * onehot * 2.0  # 1 - p_t
    weight = alpha * onehot + (1.0 - alpha) * (1.0 - onehot)
    per_entry = ce * ops.power(miss, gamma) * weight if gamma != 0 else ce * weight
    return ops.sum(per_entry) * (1.0 / max(float(normalizer), 1.0))


def regression_terms(segments: DiffArray, targets: ClipTargets, match: MatchResult):
    """Summed L1 and (1 - gIoU) over matched pairs; not yet normalized."""
    if len(match) == 0:
        return DiffArray(0.0), DiffArray(0.0)
    pred = ops.index(segments, match.query_index)
    gt = targets.segments[match.gt_index]
    l1 = ops.sum(ops.abs(pred - gt))
    g = ops.sum(1.0 - giou(pred, gt))
    return l1, g


def quality_targets(segments: np.ndarray, gt_segments: np.ndarray) -> np.ndarray:
    """Per matched pair: ``(exp(-|m_q - m_gt| / d_gt), IoU(s_q, s_gt))``."""
    segments = np.asarray(segments, dtype=float).reshape(-1, 2)
    gt_segments = np.asarray(gt_segments, dtype=float).reshape(-1, 2)
    centre = np.exp(-np.abs(segments[:, 0] - gt_segments[:, 0]) / gt_segments[:, 1])
    return np.stack([centre, iou(segments, gt_segments)], axis=-1)


def quality_loss(quality: DiffArray, segments, targets: ClipTargets, match: MatchResult) -> DiffArray:
    """Summed L1 between predicted quality pairs and their constant targets."""
    if len(match) == 0:
        return DiffArray(0.0)
    seg_values = segments.values if isinstance(segments, DiffArray) else np.asarray(segments)
    target = quality_targets(seg_values[match.query_index], targets.segments[match.gt_index])
    return ops.sum(ops.abs(ops.index(quality, match.query_index) - target))


def iou_decay(segments: DiffArray, exclude_self: bool = False) -> DiffArray:
    """Half the sum of pairwise IoU over all ordered query pairs."""
    total = ops.sum(pairwise_iou(segments)) * 0.5
    if exclude_self:
        total = total - 0.5 * segments.shape[0]
    return total


def contrastive_term(anchor: DiffArray, positive: DiffArray, negatives: Sequence[DiffArray],
                     normalize: bool = False, temperature: float = 0.1) -> DiffArray:
    """``-log(exp(f.f_p) / sum_j exp(f.f_j))`` over the positive and the negatives."""
    candidates = ops.stack([positive, *negatives], axis=0)
    f = anchor
    if normalize:
        f = ops.l2_normalize(f) * (1.0 / np.sqrt(temperature))
        candidates = ops.l2_normalize(candidates) * (1.0 / np.sqrt(temperature))
    scores = ops.matmul(candidates, ops.reshape(f, (-1, 1)))
    scores = ops.reshape(scores, (-1,))
    return ops.logsumexp(scores, axis=0) - scores[0]


@dataclass
class _BankEntry:
    clip: int
    gt: int
    class_id: int
    feature: DiffArray


def inner_subsegments(segment: np.ndarray, count: int, max_iou: float, rng: np.random.Generator) -> np.ndarray:
    """Segments sharing ``segment``'s midpoint with duration ``d * u``, ``u ~ U(0.05, max_iou)``.

    Containment makes IoU equal ``u``, so every result lies inside and
    overlaps less than ``max_iou``.
    """
    m, d = float(segment[0]), float(segment[1])
    u = rng.uniform(0.05, max_iou, size=count)
    return np.stack([np.full(count, m), d * u], axis=-1)


def ace_enc_loss(projected: Sequence[DiffArray], targets: Sequence[ClipTargets], cfg: LossConfig,
                 rng: np.random.Generator, bins: int = 8) -> DiffArray:
    """Contrastive loss on roi-pooled projected features of ground-truth segments.

    Positives are other same-class segments anywhere in the batch; negatives
    mix other-class segments and short sub-segments nested in the anchor.
    Anchors without a positive are skipped.
    """
    bank: List[_BankEntry] = []
    for ci, (feats, tgt) in enumerate(zip(projected, targets)):
        for gi in range(len(tgt)):
            bank.append(_BankEntry(ci, gi, int(tgt.classes[gi]), roi_pool(feats, tgt.segments[gi], bins)))
    if not bank:
        logger.warning("contrastive loss skipped: no ground-truth segments in batch")
        return DiffArray(0.0)
    terms = []
    for idx, anchor in enumerate(bank):
        same = [j for j, e in enumerate(bank) if j != idx and e.class_id == anchor.class_id]
        if not same:
            continue
        positive = bank[same[int(rng.integers(len(same)))]].feature
        other = [j for j, e in enumerate(bank) if e.class_id != anchor.class_id]
        n_other = min(len(other), cfg.negatives // 2) if other else 0
        n_inner = cfg.negatives - n_other
        picks = rng.choice(len(other), size=n_other, replace=False) if n_other else []
        negatives = [bank[other[int(j)]].feature for j in picks]
        seg = targets[anchor.clip].segments[anchor.gt]
        for sub in inner_subsegments(seg, n_inner, cfg.sub_iou_max, rng):
            negatives.append(roi_pool(projected[anchor.clip], sub, bins))
        terms.append(contrastive_term(anchor.feature, positive, negatives,
                                      cfg.contrastive_normalize, cfg.contrastive_temperature))
    if not terms:
        return DiffArray(0.0)
    return ops.sum(ops.stack(terms)) * (1.0 / len(terms))


def ace_dec_terms(state: QueryState, gt_logits: List[DiffArray], targets: ClipTargets, match: MatchResult,
                  cfg: LossConfig):
    """Per-layer query focal loss and ground-truth-branch focal loss, each summed over layers."""
    n_queries = state.final.logits.shape[0]
    labels = np.full(n_queries, -1, dtype=np.int64)
    labels[match.query_index] = targets.classes[match.gt_index]
    norm = max(len(match), 1)
    query_terms = [focal_loss(layer.logits, labels, cfg.focal_alpha, cfg.focal_gamma, norm)
                   for layer in state.layers]
    gt_labels = targets.classes[match.gt_index]
    gt_terms = [focal_loss(lg, gt_labels, cfg.focal_alpha, cfg.focal_gamma, norm) for lg in gt_logits]
    return query_terms, gt_terms


def ace_dec_loss(state: QueryState, gt_logits: List[DiffArray], targets: ClipTargets, match: MatchResult,
                 cfg: LossConfig) -> DiffArray:
    query_terms, gt_terms = ace_dec_terms(state, gt_logits, targets, match, cfg)
    return _sum(query_terms) + _sum(gt_terms)


def _sum(terms: Sequence[DiffArray]) -> DiffArray:
    total = DiffArray(0.0)
    for t in terms:
        total = total + t
    return total


@dataclass
class LossBreakdown:
    total: DiffArray
    ace_enc: float = 0.0
    ace_dec: float = 0.0
    focal_query: float = 0.0
    focal_gt: float = 0.0
    quality: float = 0.0
    l1: float = 0.0
    giou: float = 0.0
    iou_decay: float = 0.0
    per_layer: List[Dict[str, float]] = field(default_factory=list)
    weights: Dict[str, float] = field(default_factory=dict)

    def components(self) -> Dict[str, float]:
        return {
            "total": float(self.total.values), "ace_enc": self.ace_enc, "ace_dec": self.ace_dec,
            "focal_query": self.focal_query, "focal_gt": self.focal_gt, "quality": self.quality,
            "l1": self.l1, "giou": self.giou, "iou_decay": self.iou_decay,
        }

    def weighted_sum(self) -> float:
        w = self.weights
        return (w.get("ace_enc", 0.0) * self.ace_enc + self.ace_dec + w.get("quality", 0.0) * self.quality
                + w.get("l1", 0.0) * self.l1 + w.get("giou", 0.0) * self.giou
                + w.get("iou_decay", 0.0) * self.iou_decay)

    def log_line(self, **extra) -> str:
        items = {**extra, **self.components()}
        return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in items.items())


@dataclass
class ClipLoss:
    focal_query: List[DiffArray]
    focal_gt: List[DiffArray]
    l1: List[DiffArray]
    giou: List[DiffArray]
    quality: List[DiffArray]
    decay: DiffArray
    match: MatchResult


def match_final_layer(state: QueryState, targets: ClipTargets, cfg: LossConfig) -> MatchResult:
    final = state.final
    probs = 1.0 / (1.0 + np.exp(-final.logits.values))
    cost = match_cost(probs, final.segments.values, targets.segments, targets.classes,
                      cfg.match_l1, cfg.match_iou, cfg.match_cls)
    return hungarian_match(cost)


def clip_losses(decoder: Decoder, state: QueryState, targets: ClipTargets, cfg: LossConfig,
                ablation: AblationConfig) -> ClipLoss:
    match = match_final_layer(state, targets, cfg)
    norm = 1.0 / max(len(match), 1)
    gt_logits = []
    if ablation.ace_dec_gt and len(match):
        gt_logits = decoder.gt_branch(state, match.query_index, targets.segments[match.gt_index])
    focal_q, focal_g = ace_dec_terms(state, gt_logits, targets, match, cfg)
    l1s, gious, quals = [], [], []
    for layer in state.layers:
        l1, g = regression_terms(layer.segments, targets, match)
        l1s.append(l1 * norm)
        gious.append(g * norm)
        if ablation.quality:
            quals.append(quality_loss(layer.quality, layer.segments, targets, match) * norm)
    decay = iou_decay(state.final.segments, cfg.exclude_self_pairs) if ablation.raid else DiffArray(0.0)
    return ClipLoss(focal_q, focal_g, l1s, gious, quals, decay, match)


def total_loss(clips: Sequence[ClipLoss], ace_enc: Optional[DiffArray], cfg: LossConfig,
               ablation: AblationConfig) -> LossBreakdown:
    """Weighted sum of every objective, averaged over the clips of a batch.

    ``total = enc_weight * ace_enc + ace_dec + quality_weight * quality
    + l1_weight * l1 + giou_weight * giou + decay_weight * iou_decay``
    """
    scale = 1.0 / max(len(clips), 1)
    n_layers = len(clips[0].l1) if clips else 0
    per_layer = []
    focal_q = focal_g = l1 = g = qual = decay = DiffArray(0.0)
    for layer in range(n_layers):
        fq = _sum([c.focal_query[layer] for c in clips]) * scale
        fg = _sum([c.focal_gt[layer] for c in clips if c.focal_gt]) * scale
        ll = _sum([c.l1[layer] for c in clips]) * scale
        gg = _sum([c.giou[layer] for c in clips]) * scale
        qq = _sum([c.quality[layer] for c in clips if c.quality]) * scale
        per_layer.append({"focal_query": float(fq.values), "focal_gt": float(fg.values), "l1": float(ll.values),
                          "giou": float(gg.values), "quality": float(qq.values)})
        focal_q, focal_g, l1, g, qual = focal_q + fq, focal_g + fg, l1 + ll, g + gg, qual + qq
    decay = _sum([c.decay for c in clips]) * scale
    weights = {
        "ace_enc": cfg.enc_weight if ablation.ace_enc else 0.0,
        "quality": cfg.quality_weight if ablation.quality else 0.0,
        "l1": cfg.l1_weight,
        "giou": cfg.giou_weight,
        "iou_decay": cfg.decay_weight if ablation.raid else 0.0,
    }
    enc = ace_enc if (ace_enc is not None and ablation.ace_enc) else DiffArray(0.0)
    ace_dec = focal_q + focal_g
    total = (enc * weights["ace_enc"] + ace_dec + qual * weights["quality"] + l1 * weights["l1"]
             + g * weights["giou"] + decay * weights["iou_decay"])
    return LossBreakdown(
        total=total, ace_enc=float(enc.values), ace_dec=float(ace_dec.values),
        focal_query=float(focal_q.values), focal_gt=float(focal_g.values), quality=float(qual.values),
        l1=float(l1.values), giou=float(g.values), iou_decay=float(decay.values),
        per_layer=per_layer, weights=weights,
    )
