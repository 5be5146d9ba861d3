"""Finite-difference gradient suite: every primitive plus the full objective."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .config import RunConfig, tiny_config
from .losses import ClipTargets
from .model import QueryDetector
from .ndgrad import DiffArray, GradCheckResult, check_gradients, kink_margin, ops

GRAD_TOLERANCE = 1e-4
# float64 round-off of a central difference is about ulp(loss) / 2h; below
# this analytic magnitude the numeric side is replayed in long double
EXTENDED_BELOW = 1e-5
FIXTURE_SEED = 10


@dataclass
class LossFixture:
    model: QueryDetector
    features: List[DiffArray]
    targets: List[ClipTargets]
    loss_seed: int = 5

    def loss(self) -> DiffArray:
        rng = np.random.default_rng(self.loss_seed)
        return self.model.batch_loss(self.features, self.targets, rng)[0].total


def loss_fixture(seed: int = FIXTURE_SEED, config: RunConfig | None = None) -> LossFixture:
    """Tiny model with perturbed weights so every loss branch is active.

    Query embeddings share a common direction and the reference projection
    is widened, which gives the relational masks off-diagonal entries; the
    clip holds two same-class actions so the encoder contrastive term has a
    positive pair.
    """
    config = config or tiny_config()
    model = QueryDetector(config, seed=seed)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.values = p.values + rng.normal(0.0, 0.05, p.shape)
    n, d = model.decoder.query_embed.shape
    model.decoder.query_embed.values = rng.normal(0.0, 1.0, d) + rng.normal(0.0, 0.8, (n, d))
    model.decoder.reference.weight.values = rng.normal(0.0, 0.3, model.decoder.reference.weight.shape)
    length = config.data.window
    features = [DiffArray(rng.normal(size=(length, config.model.input_dim)))]
    targets = [ClipTargets([[0.3, 0.2], [0.7, 0.15], [0.5, 0.3]], [0, 0, 1 % config.model.num_classes])]
    return LossFixture(model, features, targets)


def _leaf(rng, shape, low=None, high=None, away_from_zero=False):
    x = rng.normal(size=shape)
    if low is not None:
        x = rng.uniform(low, high, size=shape)
    if away_from_zero:
        x = np.sign(x) * (0.2 + np.abs(x))
    return DiffArray(x, requires_grad=True)


def primitive_cases(seed: int = 0) -> List[Tuple[str, Callable[[], DiffArray], Sequence[DiffArray]]]:
    """(name, fn, inputs) per primitive; inputs keep clear of kinks and domain edges."""
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, (4, 3)), _leaf(rng, (4, 3))
    row = _leaf(rng, (1, 3))
    pos = _leaf(rng, (4, 3), 0.5, 2.0)
    nz = _leaf(rng, (4, 3), away_from_zero=True)
    m1, m2 = _leaf(rng, (3, 5)), _leaf(rng, (5, 2))
    x, w, bias = _leaf(rng, (6, 4)), _leaf(rng, (4, 3)), _leaf(rng, (3,))
    scale, shift = _leaf(rng, (3,)), _leaf(rng, (3,))
    mask = np.array([[1, 0, 1], [1, 1, 1], [0, 1, 0], [1, 1, 0]], dtype=bool)
    feats = _leaf(rng, (7, 3))
    frac = rng.uniform(0.15, 0.85, size=5)
    where = DiffArray(rng.choice(6, size=5, replace=False) + frac, requires_grad=True)
    values = _leaf(rng, (7, 4))
    mh_pos = DiffArray(rng.choice(6, size=(3, 2, 2)) + rng.uniform(0.15, 0.85, size=(3, 2, 2)), requires_grad=True)
    clip_in = DiffArray(np.array([-0.7, -0.2, 0.1, 0.35, 0.6, 1.4]), requires_grad=True)
    cases = [
        ("add", lambda: ops.add(a, row), [a, row]),
        ("sub", lambda: ops.sub(a, b), [a, b]),
        ("mul", lambda: ops.mul(a, row), [a, row]),
        ("div", lambda: ops.div(a, pos), [a, pos]),
        ("minimum", lambda: ops.minimum(a, b), [a, b]),
        ("maximum", lambda: ops.maximum(a, b), [a, b]),
        ("matmul", lambda: ops.matmul(m1, m2), [m1, m2]),
        ("linear", lambda: ops.linear(x, w, bias), [x, w, bias]),
        ("exp", lambda: ops.exp(a), [a]),
        ("log", lambda: ops.log(pos), [pos]),
        ("sigmoid", lambda: ops.sigmoid(a), [a]),
        ("softplus", lambda: ops.softplus(a * 3.0), [a]),
        ("relu", lambda: ops.relu(nz), [nz]),
        ("abs", lambda: ops.abs(nz), [nz]),
        ("power", lambda: ops.power(pos, 2.5), [pos]),
        ("sqrt", lambda: ops.sqrt(pos), [pos]),
        ("clip", lambda: ops.clip(clip_in, 0.0, 1.0) * clip_in, [clip_in]),
        ("sum", lambda: ops.sum(a, axis=0) * row, [a, row]),
        ("mean", lambda: ops.mean(a * a, axis=1), [a]),
        ("logsumexp", lambda: ops.logsumexp(a, axis=-1), [a]),
        ("reshape", lambda: ops.reshape(a, (3, 4)) @ m2[:4], [a, m2]),
        ("transpose", lambda: ops.transpose(a) @ b, [a, b]),
        ("index", lambda: ops.index(a, np.array([0, 2, 2, 3])) * b, [a, b]),
        ("concat", lambda: ops.concat([a, b], axis=1) * ops.concat([b, a], axis=1), [a, b]),
        ("stack", lambda: ops.stack([a, b], axis=0) * a, [a, b]),
        ("layer_norm", lambda: ops.layer_norm(a, scale, shift) * b, [a, scale, shift]),
        ("softmax", lambda: ops.softmax_lastdim(a, mask) * b, [a]),
        ("l2_normalize", lambda: ops.l2_normalize(a) * b, [a]),
        ("interp_gather", lambda: ops.linear_interp_gather(feats, where) * where.reshape(5, 1), [feats, where]),
        ("mh_interp_gather", lambda: ops.multihead_interp_gather(values, mh_pos, heads=2) * 1.7, [values, mh_pos]),
    ]
    return cases


@dataclass
class GradcheckReport:
    primitives: Dict[str, GradCheckResult] = field(default_factory=dict)
    total_loss: GradCheckResult | None = None
    kink_margin: float = float("nan")
    seconds: float = 0.0
    tolerance: float = GRAD_TOLERANCE

    @property
    def passed(self) -> bool:
        results = list(self.primitives.values()) + ([self.total_loss] if self.total_loss else [])
        return bool(results) and all(r.passed(self.tolerance) and r.checked > 0 for r in results)

    def lines(self) -> List[str]:
        out = []
        for name, r in self.primitives.items():
            out.append(f"{name:18s} max_rel={r.max_rel_error:.3e} coords={r.checked}")
        if self.total_loss is not None:
            r = self.total_loss
            out.append(f"{'total_loss':18s} max_rel={r.max_rel_error:.3e} coords={r.checked} "
                       f"kink_margin={self.kink_margin:.2e}")
        out.append(f"seconds={self.seconds:.1f} tolerance={self.tolerance:g} passed={self.passed}")
        return out


def run_gradcheck(seed: int = FIXTURE_SEED, h: float = 1e-5, include_loss: bool = True) -> GradcheckReport:
    start = time.perf_counter()
    report = GradcheckReport()
    for name, fn, inputs in primitive_cases():
        report.primitives[name] = check_gradients(fn, inputs, h=h, replay=False)
    if include_loss:
        fixture = loss_fixture(seed)
        params = fixture.model.parameters()
        report.total_loss = check_gradients(fixture.loss, params, h=h, extended_below=EXTENDED_BELOW)
        report.kink_margin = kink_margin(fixture.loss())
    report.seconds = time.perf_counter() - start
    return report
