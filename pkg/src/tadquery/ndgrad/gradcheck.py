"""Central finite-difference checks for backward rules.

The numeric side re-evaluates the *recorded* graph: each perturbed leaf
triggers a replay of the forward computations of the nodes downstream of
it, using only the ops' forward functions. Values a model deliberately
treats as constants (detached references, matching, masks, regression
targets) therefore stay frozen exactly as the analytic gradient assumes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .engine import ContractError, DiffArray, _topological_order, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst_input: int
    worst_index: tuple

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _downstream(order: List[DiffArray], leaf: DiffArray) -> List[DiffArray]:
    dirty = {leaf.node_id}
    out = []
    for node in order:
        if node is leaf or not node.parents:
            continue
        if any(p.node_id in dirty for p in node.parents):
            if node.replay is None:
                raise ContractError(f"node {node.op} cannot be replayed")
            dirty.add(node.node_id)
            out.append(node)
    return out


def _kink_distance(node: DiffArray) -> float:
    vals = [p.values for p in node.parents]
    kw = node.kwargs or {}
    if node.op in ("relu", "abs"):
        d = np.abs(vals[0])
    elif node.op in ("minimum", "maximum"):
        # exact ties are structural (an argument compared with itself) and
        # move together under any perturbation
        d = np.abs(vals[0] - vals[1])
        d = d[d > 0]
    elif node.op == "clip":
        bounds = [b for b in (kw.get("low"), kw.get("high")) if b is not None]
        if not bounds:
            return np.inf
        d = np.min([np.abs(vals[0] - b) for b in bounds], axis=0)
    elif node.op in ("interp_gather", "mh_interp_gather"):
        if not node.parents[1].requires_grad:
            return np.inf  # linear in the features
        length = vals[0].shape[0]
        pos = vals[1]
        d = np.abs(pos - np.round(pos))  # integer knots, including 0 and T - 1
        if kw.get("clamp", True):
            d = np.where((pos < 0) | (pos > length - 1), np.minimum(np.abs(pos), np.abs(pos - (length - 1))), d)
    else:
        return np.inf
    return float(np.min(d)) if np.size(d) else np.inf


def kink_margin(root: DiffArray) -> float:
    """Smallest distance of any piecewise op input to its nearest kink.

    Central differences are only meaningful when every such input stays on
    one linear piece under the perturbation, so fixtures should keep this
    well above the step size times the typical input scale.
    """
    return min((_kink_distance(n) for n in _topological_order(root)), default=np.inf)


def replay_gradient(root: DiffArray, leaf: DiffArray, h: float = 1e-5,
                    order: List[DiffArray] | None = None, indices: Sequence[int] | None = None,
                    extended: bool = False) -> np.ndarray:
    """Central differences of ``root.values.sum()`` w.r.t. ``leaf`` by graph replay.

    ``indices`` restricts the flat coordinates evaluated (others stay 0).
    ``extended`` replays in long double, which lowers the round-off floor of
    the difference quotient well below float64's ``ulp(root) / h``.
    """
    order = _topological_order(root) if order is None else order
    nodes = _downstream(order, leaf)
    saved_values = [n.values for n in nodes]
    saved_leaf = leaf.values
    work = np.array(saved_leaf, dtype=np.longdouble if extended else np.float64, copy=True)
    leaf.values = work
    flat = work.reshape(-1)
    grad = np.zeros(saved_leaf.shape)
    out = grad.reshape(-1)
    step = flat.dtype.type(h)

    def evaluate():
        for n in nodes:
            n.values = n.replay()
        return root.values.sum()

    coords = range(flat.size) if indices is None else indices
    with no_grad():
        try:
            for i in coords:
                keep = flat[i]
                flat[i] = keep + step
                up = evaluate()
                flat[i] = keep - step
                down = evaluate()
                flat[i] = keep
                out[i] = float((up - down) / (2 * step))
        finally:
            leaf.values = saved_leaf
            for n, v in zip(nodes, saved_values):
                n.values = v
    return grad


def numeric_gradient(fn: Callable[[], DiffArray], array: DiffArray, h: float = 1e-5) -> np.ndarray:
    """Central differences by re-running ``fn`` from scratch (no frozen constants)."""
    grad = np.zeros_like(array.values)
    flat = array.values.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn().values.sum()
            flat[i] = keep - h
            down = fn().values.sum()
            flat[i] = keep
            out[i] = (up - down) / (2.0 * h)
    return grad


def _relative_errors(analytic: np.ndarray, numeric: np.ndarray, min_magnitude: float):
    keep = np.abs(analytic) > min_magnitude
    rel = np.zeros_like(analytic)
    rel[keep] = np.abs(analytic[keep] - numeric[keep]) / np.maximum(np.abs(analytic[keep]), np.abs(numeric[keep]))
    return rel, int(keep.sum())


def check_gradients(
    fn: Callable[[], DiffArray],
    inputs: Sequence[DiffArray],
    h: float = 1e-5,
    min_magnitude: float = 1e-8,
    replay: bool = True,
    extended_below: float = 0.0,
) -> GradCheckResult:
    """Compare backward gradients of ``fn().sum()`` against central differences.

    Relative error is ``|a - n| / max(|a|, |n|)`` over every coordinate whose
    analytic gradient exceeds ``min_magnitude``. With ``replay=False`` the
    numeric side calls ``fn`` again per perturbation instead of replaying
    the recorded graph. Coordinates with ``|a| < extended_below`` get their
    numeric value from a long-double replay (the choice depends only on the
    analytic magnitude).
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = fn()
    root = out if out.size == 1 else out.sum()
    root.backward()
    analytic: List[np.ndarray] = [
        x.grad.copy() if x.grad is not None else np.zeros_like(x.values) for x in inputs
    ]
    order = _topological_order(root) if replay else None
    worst = (0.0, -1, ())
    checked = 0
    for k, x in enumerate(inputs):
        a = analytic[k]
        if replay:
            numeric = replay_gradient(root, x, h, order)
            small = np.flatnonzero((np.abs(a) > min_magnitude) & (np.abs(a) < extended_below))
            if small.size:
                precise = replay_gradient(root, x, h, order, indices=small, extended=True)
                numeric.reshape(-1)[small] = precise.reshape(-1)[small]
        else:
            numeric = numeric_gradient(fn, x, h)
        rel, count = _relative_errors(a, numeric, min_magnitude)
        checked += count
        if count == 0:
            continue
        i = int(np.argmax(rel))
        if rel.reshape(-1)[i] > worst[0]:
            worst = (float(rel.reshape(-1)[i]), k, np.unravel_index(i, rel.shape))
    return GradCheckResult(worst[0], checked, worst[1], tuple(int(v) for v in worst[2]))
