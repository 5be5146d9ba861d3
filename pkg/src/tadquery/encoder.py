"""Input projection, position encoding and deformable temporal self-attention."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional

import numpy as np

from .config import ModelConfig
from .ndgrad import DiffArray, FeedForward, LayerNorm, Linear, Module, ShapeError, ops


@dataclass
class EncodedClip:
    projected: DiffArray  # input projection output, the contrastive-loss site
    encoded: DiffArray


@lru_cache(maxsize=16)
def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table [length, dim] (read-only, cached)."""
    positions = np.arange(length)[:, None]
    freqs = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs[: dim // 2])
    table.flags.writeable = False
    return table


class DeformableSelfAttention(Module):
    """Each frame samples ``points`` offsets per head around itself.

    Offset and attention-logit predictors start at zero, so the first
    forward pass has every frame attending only to itself with uniform
    weights across its samples.
    """

    def __init__(self, dim: int, ffn_dim: int, heads: int, points: int, rng: np.random.Generator):
        self.heads = heads
        self.points = points
        self.offsets = Linear(dim, heads * points, rng, zero=True)
        self.logits = Linear(dim, heads * points, rng, zero=True)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng)

    def sample(self, x: DiffArray):
        """Returns (attended [T, D] before output projection, sample positions [T, H, K])."""
        length, dim = x.shape
        if length < 2:
            raise ShapeError("deformable attention needs at least two frames")
        hk = (length, self.heads, self.points)
        offsets = ops.reshape(self.offsets(x), hk)
        positions = offsets + np.arange(length, dtype=np.float64)[:, None, None]
        weights = ops.softmax_lastdim(ops.reshape(self.logits(x), hk))
        samples = ops.multihead_interp_gather(self.value(x), positions, self.heads, clamp=True)
        attended = ops.sum(samples * ops.reshape(weights, hk + (1,)), axis=2)
        return ops.reshape(attended, (length, dim)), np.clip(positions.values, 0, length - 1)

    def __call__(self, x: DiffArray) -> DiffArray:
        attended, _ = self.sample(x)
        x = self.norm(x + self.output(attended))
        return self.ffn(x)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.input_dim = cfg.input_dim
        self.project = Linear(cfg.input_dim, cfg.hidden_dim, rng)
        self.layers: List[DeformableSelfAttention] = [
            DeformableSelfAttention(cfg.hidden_dim, cfg.ffn_dim, cfg.heads, cfg.points, rng)
            for _ in range(cfg.enc_layers)
        ]

    def project_input(self, raw) -> DiffArray:
        raw = raw if isinstance(raw, DiffArray) else DiffArray(raw)
        if raw.ndim != 2 or raw.shape[1] != self.input_dim:
            raise ShapeError(f"expected [T, {self.input_dim}] features, got {raw.shape}")
        return self.project(raw)

    def __call__(self, raw, position: Optional[np.ndarray] = None) -> EncodedClip:
        projected = self.project_input(raw)
        length, dim = projected.shape
        x = projected + (sinusoidal_encoding(length, dim) if position is None else position)
        for layer in self.layers:
            x = layer(x)
        return EncodedClip(projected, x)
