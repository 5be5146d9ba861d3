import itertools

import numpy as np
import pytest

from tadquery.config import RaidConfig, tiny_config
from tadquery.decoder import (Decoder, RelationalAttention, SegmentCrossAttention, build_relational_sets, logit,
                              refine_segment, relational_mask)
from tadquery.encoder import DeformableSelfAttention, Encoder
from tadquery.ndgrad import DiffArray, ShapeError, check_gradients, ops


def oracle_mask(a, b, gamma, tau, mode):
    """Pair enumeration of the relational set rules."""
    n = len(a)
    keep = np.zeros((n, n), dtype=bool)
    for i, j in itertools.product(range(n), repeat=2):
        similar = a[i, j] - gamma > 0
        low_overlap = b[i, j] - tau < 0
        if i == j:
            keep[i, j] = True
        elif mode == "intersection":
            keep[i, j] = similar and low_overlap
        else:
            keep[i, j] = low_overlap and not similar
    return keep


def test_relational_mask_hand_example():
    a = np.array([[1, .9, 0], [.9, 1, 0], [0, 0, 1]])
    b = np.array([[1, .8, 0], [.8, 1, 0], [0, 0, 1]])
    cfg = RaidConfig(gamma=0.2, tau=0.5, set_mode="intersection")
    mask = relational_mask(a - cfg.gamma > 0, b - cfg.tau < 0, cfg.set_mode)
    np.testing.assert_array_equal(mask, np.eye(3, dtype=bool))


def test_verbatim_mode_with_extreme_thresholds_is_identity():
    rng = np.random.default_rng(0)
    q, segs = rng.normal(size=(4, 6)), np.stack([rng.uniform(.2, .8, 4), rng.uniform(.05, .3, 4)], -1)
    mask = build_relational_sets(q, segs, RaidConfig(gamma=-1.0, tau=1.0, set_mode="verbatim"))
    np.testing.assert_array_equal(mask, np.eye(4, dtype=bool))


def test_single_query_mask():
    mask = build_relational_sets(np.ones((1, 3)), np.array([[0.5, 0.2]]), RaidConfig())
    np.testing.assert_array_equal(mask, [[True]])


def test_identity_mask_gives_unit_self_weights():
    attn = RelationalAttention(6, np.random.default_rng(0))
    q = DiffArray(np.random.default_rng(1).normal(size=(4, 6)))
    w = attn.weights(q, np.eye(4, dtype=bool)).values
    np.testing.assert_array_equal(w, np.eye(4))


def test_identical_queries_attend_uniformly():
    attn = RelationalAttention(6, np.random.default_rng(0))
    q = DiffArray(np.tile(np.arange(6.0), (5, 1)))
    w = attn.weights(q, np.ones((5, 5), dtype=bool)).values
    np.testing.assert_allclose(w, 0.2, atol=1e-15)


def test_refine_segment_examples():
    prev = np.array([0.5, 0.3])
    np.testing.assert_allclose(refine_segment(prev, DiffArray(np.zeros(2))).values, prev, atol=1e-12)
    out = refine_segment(prev, DiffArray([logit(0.7), 0.0])).values
    assert out[0] == pytest.approx(0.7, abs=1e-12)
    assert refine_segment(prev, DiffArray([1e3, 0.0])).values[0] == pytest.approx(1.0)
    # coordinates at the boundary are clamped before the logit
    assert np.all(np.isfinite(refine_segment(np.array([0.0, 1.0]), DiffArray(np.zeros(2))).values))


def test_cross_attention_single_point_samples_the_midpoint():
    cross = SegmentCrossAttention(8, 16, heads=2, points=1, rng=np.random.default_rng(0))
    q = DiffArray(np.random.default_rng(1).normal(size=(3, 8)))
    values = DiffArray(np.random.default_rng(2).normal(size=(21, 8)))
    segs = np.array([[0.5, 0.2], [0.3, 0.4], [0.7, 0.1]])
    _, positions = cross.sample(q, segs, values)
    np.testing.assert_allclose(positions[:, :, 0], (segs[:, :1] * 20).repeat(2, axis=1), atol=1e-12)


def test_cross_attention_samples_stay_inside_segment():
    rng = np.random.default_rng(3)
    cross = SegmentCrossAttention(8, 16, heads=2, points=4, rng=rng)
    cross.offsets.weight.values = rng.normal(0, 5, cross.offsets.weight.shape)
    q = DiffArray(rng.normal(size=(6, 8)))
    values = DiffArray(rng.normal(size=(33, 8)))
    segs = np.stack([rng.uniform(0, 1, 6), rng.uniform(0.05, 0.8, 6)], -1)
    _, positions = cross.sample(q, segs, values)
    start = np.clip(segs[:, 0] - segs[:, 1] / 2, 0, 1) * 32
    end = np.clip(segs[:, 0] + segs[:, 1] / 2, 0, 1) * 32
    assert np.all(positions >= start[:, None, None] - 1e-12)
    assert np.all(positions <= end[:, None, None] + 1e-12)


def test_cross_attention_over_constant_region_returns_the_constant():
    cross = SegmentCrossAttention(4, 8, heads=2, points=3, rng=np.random.default_rng(0))
    values = np.random.default_rng(1).normal(size=(17, 4))
    values[4:12] = [1.0, -2.0, 3.0, 0.5]
    attended, _ = cross.sample(DiffArray(np.ones((1, 4))), np.array([[0.5, 0.4]]), DiffArray(values))
    np.testing.assert_allclose(attended.values[0], values[6], rtol=1e-12)


def test_encoder_layer_initially_attends_to_self():
    rng = np.random.default_rng(0)
    layer = DeformableSelfAttention(8, 16, heads=2, points=3, rng=rng)
    x = DiffArray(rng.normal(size=(10, 8)))
    attended, positions = layer.sample(x)
    np.testing.assert_array_equal(positions, np.broadcast_to(np.arange(10.0)[:, None, None], (10, 2, 3)))
    np.testing.assert_allclose(attended.values, layer.value(x).values, rtol=1e-12)


def test_encoder_layer_is_translation_invariant_on_constant_input():
    rng = np.random.default_rng(0)
    layer = DeformableSelfAttention(8, 16, heads=2, points=3, rng=rng)
    layer.offsets.weight.values = rng.normal(0, 1, layer.offsets.weight.shape)
    out = layer(DiffArray(np.tile(rng.normal(size=8), (12, 1)))).values
    np.testing.assert_allclose(out, np.tile(out[0], (12, 1)), atol=1e-12)


def test_encoder_layer_gradients():
    rng = np.random.default_rng(4)
    layer = DeformableSelfAttention(8, 8, heads=2, points=2, rng=rng)
    for p in layer.parameters():
        p.values = p.values + rng.normal(0, 0.1, p.shape)
    x = DiffArray(rng.normal(size=(8, 8)), requires_grad=True)
    result = check_gradients(lambda: ops.sum(layer(x) * np.linspace(-1, 1, 8)), [x, *layer.parameters()])
    assert result.passed(1e-4), result


def test_encoder_without_layers_adds_position_encoding():
    cfg = tiny_config(model={"enc_layers": 0})
    enc = Encoder(cfg.model, np.random.default_rng(0))
    raw = np.zeros((32, 16))
    clip = enc(raw)
    np.testing.assert_allclose(clip.projected.values, np.tile(enc.project.bias.values, (32, 1)))
    assert not np.allclose(clip.encoded.values, clip.projected.values)
    with pytest.raises(ShapeError):
        enc(np.zeros((32, 15)))


def test_decoder_is_permutation_equivariant():
    cfg = tiny_config()
    dec = Decoder(cfg.model, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    queries = rng.normal(size=(5, 32))
    encoded = DiffArray(rng.normal(size=(32, 32)))
    perm = np.array([3, 0, 4, 1, 2])
    a = dec(encoded, cfg.raid, queries=DiffArray(queries))
    b = dec(encoded, cfg.raid, queries=DiffArray(queries[perm]))
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_allclose(lb.logits.values, la.logits.values[perm], atol=1e-12)
        np.testing.assert_allclose(lb.segments.values, la.segments.values[perm], atol=1e-12)


def test_gt_branch_equals_main_branch_for_the_reference_segment():
    cfg = tiny_config()
    dec = Decoder(cfg.model, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    encoded = DiffArray(rng.normal(size=(32, 32)))
    state = dec(encoded, cfg.raid, queries=DiffArray(rng.normal(size=(5, 32))))
    idx = np.array([2])
    # the last layer's cross-attention reference is the previous layer's output
    ref = state.layers[-1].reference[idx]
    logits = dec.gt_branch(state, idx, ref)
    np.testing.assert_allclose(logits[-1].values, state.final.logits.values[idx], atol=1e-12)
    assert dec.gt_branch(state, np.array([], dtype=int), np.zeros((0, 2))) == []


def test_masked_weights_are_zero_and_rows_normalized_in_the_decoder():
    cfg = tiny_config()
    dec = Decoder(cfg.model, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    state = dec(DiffArray(rng.normal(size=(32, 32))), cfg.raid, queries=DiffArray(rng.normal(size=(5, 32))))
    for layer in state.layers:
        w = layer.attention.values
        assert np.all(w[~layer.mask] == 0.0)
        assert np.max(np.abs(w.sum(-1) - 1.0)) <= 1e-12
