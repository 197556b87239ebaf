import numpy as np
import pytest

from facexplain.errors import ImageSizeError, RegionMismatchError
from facexplain.geometry import pair_weights
from facexplain.perturbation import (
    MaskingStrategy,
    SimilarityMap,
    apply_mask,
    average_map,
    combine_greedy,
    explain_pair,
    greedy_removal,
    normalize_signed,
    pair_score,
    single_removal,
)

from conftest import ScriptedEmbedder, cached_face, cached_pair, scripted_pair

# additive drops, largest first in canonical order: greedy-negative removes region t-1 at step t
DROPS = [0.1, 0.08, 0.06, 0.05, 0.04, 0.02, 0.009, 0.004, 0.003, 0.002, 0.001, 0.0005, 0.0002]


def additive_score(base=0.9, drops=DROPS):
    return lambda gone: base - sum(drops[k] for k in gone)


def test_apply_mask_identities():
    img = cached_pair(0, True).image_a
    none = np.zeros(img.shape[:2], bool)
    np.testing.assert_array_equal(apply_mask(img, none, MaskingStrategy()), img)
    full = ~none
    assert (apply_mask(img, full, MaskingStrategy("black")) == 0).all()
    assert (apply_mask(img, full, MaskingStrategy("white")) == 255).all()
    n1 = apply_mask(img, full, MaskingStrategy("noise", 3))
    np.testing.assert_array_equal(n1, apply_mask(img, full, MaskingStrategy("noise", 3)))
    assert not np.array_equal(n1, apply_mask(img, full, MaskingStrategy("noise", 4)))
    with pytest.raises(ImageSizeError):
        apply_mask(img, np.zeros((3, 3), bool), MaskingStrategy())


def test_strategy_parse_and_validation():
    assert MaskingStrategy.parse("noise:7") == MaskingStrategy("noise", 7)
    assert MaskingStrategy.parse("white").label() == "white"
    with pytest.raises(ValueError):
        MaskingStrategy("blur")


def test_normalize_signed_cases():
    out = normalize_signed({"a": 3.0, "b": 1.0, "c": -2.0, "d": -6.0})
    assert out == {"a": 0.75, "b": 0.25, "c": -0.25, "d": -0.75}
    assert normalize_signed({"a": 0.0, "b": -1.0}) == {"a": 0.0, "b": -1.0}
    assert normalize_signed({"a": 0.0, "b": 0.0}) == {"a": 0.0, "b": 0.0}


def test_single_removal_rows_follow_weights(embedder):
    p = cached_pair(6, False)
    w = pair_weights(p.masks_a, p.masks_b)
    table, s0a, s0b = single_removal(p.image_a, p.image_b, p.masks_a, p.masks_b, w, MaskingStrategy(), embedder)
    assert [r.region for r in table.rows] == list(p.masks_a.names)
    for r in table.rows:
        assert r.c == r.delta * w.w_hat[r.region]
        assert r.delta == table.base_score - r.score
    assert s0a.per_region == s0b.per_region
    # per-pixel map is the region value painted through the label raster
    assert s0a.per_pixel[p.masks_a.masks["nose_left"]][0] == s0a.per_region["nose_left"]


def test_sum_rule_on_single_removal(embedder):
    for seed in range(6):
        p = cached_pair(seed, seed % 2 == 0)
        table, s0, _ = single_removal(p.image_a, p.image_b, p.masks_a, p.masks_b, None, MaskingStrategy(), embedder)
        vals = list(s0.per_region.values())
        pos = [v for v in vals if v > 0]
        neg = [v for v in vals if v < 0]
        if pos:
            assert sum(pos) == pytest.approx(1.0, abs=1e-9)
        if neg:
            assert sum(neg) == pytest.approx(-1.0, abs=1e-9)


def test_identity_pair_is_null(embedder):
    img, _, masks = cached_face(9)
    exp = explain_pair(img, img, masks, masks, embedder)
    assert exp.base_score == 1.0
    assert all(r.c == 0.0 for r in exp.table.rows)
    for pair in (exp.s0, exp.s1, exp.s_avg):
        assert not pair[0].per_pixel.any() and not pair[1].per_pixel.any()


def test_stop_rule_stops_at_seven():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    emb = ScriptedEmbedder(additive_score())
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, theta=0.01)
    assert trace.stop_t == 7 and trace.stop_reason == "theta"
    assert len(trace.steps) == 7
    assert trace.steps[-1].delta == pytest.approx(0.009, abs=1e-12)
    assert [s.region_added for s in trace.steps] == list(masks.names[:7])
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, theta=0.005)
    assert trace.stop_t == 8 and len(trace.steps) == 8


def test_t_max_and_exhaustion():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    emb = ScriptedEmbedder(additive_score(drops=[0.03] * 13))
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, theta=0.01, t_max=1)
    assert trace.stop_reason == "t_max" and len(trace.steps) == 1
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, theta=0.01, t_max=20)
    assert trace.stop_reason == "exhausted" and len(trace.steps) == 12


def test_ties_go_to_lowest_canonical_index():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    drops = [0.01] * 3 + [0.05] * 10
    emb = ScriptedEmbedder(additive_score(drops=drops))
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, t_max=2)
    assert [s.region_added for s in trace.steps] == ["eye_left", "eye_right"]


def test_wrong_direction_step_is_not_recorded():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    # every removal raises the score: the negative run records nothing
    emb = ScriptedEmbedder(additive_score(base=0.5, drops=[-0.02] * 13))
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb)
    assert trace.steps == [] and trace.stop_t == 1 and trace.stop_reason == "theta"
    assert trace.stop_delta < 0
    _, _, pos = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, polarity="positive", t_max=3)
    assert len(pos.steps) == 3 and all(s.delta < 0 for s in pos.steps)


def test_greedy_weights_use_accumulated_areas():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    emb = ScriptedEmbedder(additive_score())
    w = pair_weights(masks, masks)
    _, _, trace = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, t_max=3)
    for step in trace.steps:
        area = sum(masks.areas[n] for n in step.accumulated)
        expect = (masks.image_area / area) ** 2 / w.denominator
        assert step.w_hat_best == pytest.approx(expect, rel=1e-12)
        assert step.c_best == step.delta * step.w_hat_best


def test_h1_assign_and_add():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    emb = ScriptedEmbedder(additive_score())
    _, _, assign = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, t_max=3, h1_update="assign")
    _, _, add = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, t_max=3, h1_update="add")
    c = [s.c_best for s in assign.steps]
    names = masks.names
    assert assign.h1[names[0]] == assign.h1[names[2]] == c[2]
    assert add.h1[names[0]] == pytest.approx(sum(c))
    assert add.h1[names[2]] == c[2]
    assert assign.h1[names[5]] == add.h1[names[5]] == 0.0


def test_greedy_scores_are_monotone(embedder):
    p = cached_pair(3, False)
    for pol, ok in (("negative", lambda d: d >= 0), ("positive", lambda d: d <= 0)):
        _, _, trace = greedy_removal(p.image_a, p.image_b, p.masks_a, p.masks_b, MaskingStrategy(), embedder,
                                     polarity=pol)
        assert all(ok(s.delta) for s in trace.steps)


def test_combine_and_average():
    _, _, masks = cached_face(1)
    a, b = scripted_pair(masks)
    emb = ScriptedEmbedder(additive_score())
    _, _, neg = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb)
    _, _, pos = greedy_removal(a, b, masks, masks, MaskingStrategy(), emb, polarity="positive")
    s1, _ = combine_greedy(neg, pos, masks, masks)
    assert sum(v for v in s1.per_region.values() if v > 0) == pytest.approx(1.0)

    def flat(v, kind):
        return SimilarityMap(np.full((2, 2), v), {"r": v}, kind)
    assert average_map(flat(0.5, "S0"), flat(-0.5, "S1")).per_region == {"r": 0.0}
    assert average_map(flat(1.0, "S0"), flat(0.0, "S1")).per_region == {"r": 0.5}
    avg = average_map(flat(0.2, "S0"), flat(0.6, "S1"))
    assert avg.kind == "S_AVG"
    np.testing.assert_allclose(avg.per_pixel, 0.4)


def test_noise_strategy_is_reproducible(embedder):
    p = cached_pair(7, True)
    s = MaskingStrategy("noise", 5)
    t1, _, _ = single_removal(p.image_a, p.image_b, p.masks_a, p.masks_b, None, s, embedder)
    t2, _, _ = single_removal(p.image_a, p.image_b, p.masks_a, p.masks_b, None, s, embedder)
    assert t1.to_json() == t2.to_json()


def test_pair_checks(embedder):
    p = cached_pair(0, True)
    with pytest.raises(ImageSizeError):
        single_removal(p.image_a[:64], p.image_b, p.masks_a, p.masks_b, None, MaskingStrategy(), embedder)
    from facexplain.geometry import RegionMaskSet
    other = RegionMaskSet.from_labels(p.masks_b.labels, tuple(reversed(p.masks_b.names)))
    with pytest.raises(RegionMismatchError):
        explain_pair(p.image_a, p.image_b, p.masks_a, other, embedder)


def test_pair_score_symmetry(embedder):
    p = cached_pair(8, False)
    assert pair_score(embedder, p.image_a, p.image_b) == pytest.approx(
        pair_score(embedder, p.image_b, p.image_a), abs=1e-15)
