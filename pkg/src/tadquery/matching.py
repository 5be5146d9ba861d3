"""Bipartite assignment of queries to ground-truth actions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import iou


class MatchConfigError(ValueError):
    pass


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int]]  # (query index, gt index), ordered by gt index
    unmatched: List[int]

    @property
    def query_index(self) -> np.ndarray:
        return np.array([q for q, _ in self.pairs], dtype=np.int64)

    @property
    def gt_index(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.pairs)


def match_cost(probs: np.ndarray, segments: np.ndarray, gt_segments: np.ndarray, gt_classes: np.ndarray,
               w_l1: float = 5.0, w_iou: float = 2.0, w_cls: float = 2.0) -> np.ndarray:
    """``cost[j, k] = w_l1 * L1(s_j, s_k) - w_iou * IoU(s_j, s_k) - w_cls * p_j(c_k)``."""
    probs = np.asarray(probs, dtype=float)
    segments = np.asarray(segments, dtype=float).reshape(-1, 2)
    gt_segments = np.asarray(gt_segments, dtype=float).reshape(-1, 2)
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    l1 = np.abs(segments[:, None, :] - gt_segments[None, :, :]).sum(axis=-1)
    overlap = iou(segments[:, None, :], gt_segments[None, :, :])
    return w_l1 * l1 - w_iou * overlap - w_cls * probs[:, gt_classes]


def _optimal_total(cost: np.ndarray) -> float:
    if cost.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_match(cost: np.ndarray, tol: float = 1e-12) -> MatchResult:
    """Minimum-cost one-to-one assignment covering every ground truth.

    Among optimal assignments the lexicographically smallest sequence of
    query indices, taken in ground-truth order, wins.
    """
    cost = np.asarray(cost, dtype=float)
    n_queries, n_gts = cost.shape
    if n_gts > n_queries:
        raise MatchConfigError(f"{n_gts} ground truths cannot be matched to {n_queries} queries")
    if n_gts == 0:
        return MatchResult([], list(range(n_queries)))
    best = _optimal_total(cost)
    slack = tol * max(1.0, abs(best))

    # fix gts in order, each to the smallest query that keeps the total optimal
    free = list(range(n_queries))
    fixed = 0.0
    chosen = []
    for gt in range(n_gts):
        rest_gts = list(range(gt + 1, n_gts))
        bound = cost[np.ix_(free, rest_gts)].min(axis=0).sum() if rest_gts else 0.0
        pick = None
        for q in free:
            if fixed + cost[q, gt] + bound > best + slack:
                continue
            rest_q = [x for x in free if x != q]
            rest = _optimal_total(cost[np.ix_(rest_q, rest_gts)]) if rest_gts else 0.0
            if fixed + cost[q, gt] + rest <= best + slack:
                pick = q
                break
        if pick is None:  # only reachable through float round-off in the totals
            rows, cols = linear_sum_assignment(cost[np.ix_(free, list(range(gt, n_gts)))])
            pick = free[int(rows[np.argmin(cols)])]
        chosen.append(pick)
        fixed += cost[pick, gt]
        free.remove(pick)
    pairs = [(q, g) for g, q in enumerate(chosen)]
    used = set(chosen)
    return MatchResult(pairs, [q for q in range(n_queries) if q not in used])
