from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .engine import ContractError
from .nn import Parameter


@dataclass
class AdamState:
    step: int = 0
    first: List[np.ndarray] = field(default_factory=list)
    second: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> Tuple[List[np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam update. Inputs are not mutated."""
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ContractError("params, grads and optimizer state differ in length")
    beta1, beta2 = betas
    step = state.step + 1
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    new_params, first, second = [], [], []
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if p.shape != g.shape or p.shape != m.shape or p.shape != v.shape:
            raise ContractError(f"shape mismatch between parameter {p.shape} and state/grad")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        p = p * (1.0 - lr * weight_decay)
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params.append(p)
        first.append(m)
        second.append(v)
    return new_params, AdamState(step, first, second)


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        return [g * scale for g in grads], total
    return list(grads), total


class AdamW:
    """Stateful wrapper that updates a list of Parameters in place."""

    def __init__(self, params: Sequence[Parameter], lr: float, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay: float = 1e-4, max_grad_norm: float = 0.0):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.state = AdamState.zeros_like([p.array.values for p in self.params])
        self.last_grad_norm = 0.0

    def step(self) -> None:
        grads = [
            p.array.grad if p.array.grad is not None else np.zeros_like(p.array.values)
            for p in self.params
        ]
        grads, self.last_grad_norm = clip_grad_norm(grads, self.max_grad_norm)
        values, self.state = adamw_step(
            [p.array.values for p in self.params], grads, self.state,
            self.lr, self.betas, self.eps, self.weight_decay,
        )
        for p, v in zip(self.params, values):
            p.array.values = v

    def zero_grad(self) -> None:
        for p in self.params:
            p.array.grad = None
