"""The detector: encoder + decoder + the batch objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .config import RunConfig
from .decoder import Decoder, QueryState
from .encoder import EncodedClip, Encoder
from .losses import ClipLoss, ClipTargets, LossBreakdown, ace_enc_loss, clip_losses, total_loss
from .ndgrad import DiffArray, Module


@dataclass
class ForwardResult:
    clip: EncodedClip
    queries: QueryState


class QueryDetector(Module):
    def __init__(self, config: RunConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(config.model, rng)
        self.decoder = Decoder(config.model, rng)

    def __call__(self, features) -> ForwardResult:
        clip = self.encoder(features)
        state = self.decoder(clip.encoded, self.config.raid, use_raid=self.config.ablation.raid)
        return ForwardResult(clip, state)

    def batch_loss(self, features: Sequence, targets: Sequence[ClipTargets],
                   rng: np.random.Generator) -> Tuple[LossBreakdown, Sequence[ClipLoss]]:
        cfg = self.config
        results = [self(f) for f in features]
        clips = [clip_losses(self.decoder, r.queries, t, cfg.loss, cfg.ablation) for r, t in zip(results, targets)]
        enc = None
        if cfg.ablation.ace_enc:
            enc = ace_enc_loss([r.clip.projected for r in results], targets, cfg.loss, rng, cfg.model.roi_bins)
        return total_loss(clips, enc, cfg.loss, cfg.ablation), clips

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def predict_window(model: QueryDetector, features) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Final-layer (logits, segments, quality) as plain arrays, no graph."""
    from .ndgrad import no_grad

    with no_grad():
        state = model(features if isinstance(features, DiffArray) else DiffArray(features)).queries
    final = state.final
    return final.logits.values, final.segments.values, final.quality.values
