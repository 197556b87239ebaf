import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facexplain.concepts import (
    ENDPOINT_WEIGHT,
    all_coalitions,
    borda_fuse,
    expand_abbreviation,
    extract_concepts,
    kernel_shap,
    part_importance,
    sampled_coalitions,
    shap_from_values,
    shapley_kernel_weight,
)
from facexplain.errors import CorpusError, RankingError
from facexplain.perturbation import MaskingStrategy

from conftest import cached_face


def enumerated_shapley(v, m):
    """phi_i = sum over S not containing i of |S|!(m-|S|-1)!/m! (v(S+i) - v(S))."""
    phi = np.zeros((m,) + np.shape(v(frozenset())))
    for i in range(m):
        others = [j for j in range(m) if j != i]
        for k in range(m):
            coef = math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m)
            for s in itertools.combinations(others, k):
                s = frozenset(s)
                phi[i] += coef * (np.asarray(v(s | {i})) - np.asarray(v(s)))
    return phi


def as_value_fn(v):
    return lambda z: np.array([np.atleast_1d(v(frozenset(np.flatnonzero(row)))) for row in z], dtype=float)


def random_game(rng, m, d=3):
    table = {frozenset(s): rng.normal(size=d) for k in range(m + 1)
             for s in itertools.combinations(range(m), k)}
    return lambda s: table[frozenset(s)]


def test_kernel_weights():
    assert shapley_kernel_weight(13, 1) == pytest.approx(1 / 13, rel=1e-15)
    assert shapley_kernel_weight(13, 12) == pytest.approx(1 / 13, rel=1e-15)
    assert shapley_kernel_weight(13, 0) == shapley_kernel_weight(13, 13) == ENDPOINT_WEIGHT
    # symmetric in k <-> m - k
    assert shapley_kernel_weight(13, 4) == shapley_kernel_weight(13, 9)


def test_all_coalitions_count():
    z = all_coalitions(13)
    assert z.shape == (8190, 13)
    assert len({row.tobytes() for row in z}) == 8190
    assert z.sum(axis=1).min() == 1 and z.sum(axis=1).max() == 12


@pytest.mark.parametrize("m", [3, 5, 6])
def test_exact_regression_equals_enumerated_shapley(m):
    rng = np.random.default_rng(m)
    v = random_game(rng, m)
    phi, base, full, _ = shap_from_values(as_value_fn(v), m, "exact")
    np.testing.assert_allclose(phi, enumerated_shapley(v, m), atol=1e-10)
    np.testing.assert_allclose(phi.sum(axis=0), full - base, atol=1e-12)


def test_penalized_solver_agrees_with_constrained():
    rng = np.random.default_rng(2)
    v = random_game(rng, 6)
    exact, *_ = shap_from_values(as_value_fn(v), 6, "exact")
    pen, base, full, _ = shap_from_values(as_value_fn(v), 6, "exact", solver="penalized")
    np.testing.assert_allclose(pen, exact, atol=1e-5)
    np.testing.assert_allclose(pen.sum(axis=0), full - base, atol=1e-4)


def test_additive_game_recovers_contributions():
    contrib = np.array([0.3, -1.2, 2.5, 0.0, 0.7])
    v = lambda s: np.array([1.0 + sum(contrib[j] for j in s)])  # noqa: E731
    phi, *_ = shap_from_values(as_value_fn(v), 5, "exact")
    np.testing.assert_allclose(phi[:, 0], contrib, atol=1e-12)


def test_symmetric_and_dummy_players():
    # players 0 and 1 interchangeable, player 3 a dummy
    def v(s):
        s = set(s)
        return np.array([2.0 * (0 in s and 1 in s) + len({0, 1} & s) + 3.0 * (2 in s)])
    phi, *_ = shap_from_values(as_value_fn(v), 4, "exact")
    assert phi[0, 0] == pytest.approx(phi[1, 0], abs=1e-12)
    assert phi[3, 0] == pytest.approx(0.0, abs=1e-12)


def test_sampled_design_with_full_budget_is_exhaustive():
    z, w = sampled_coalitions(6, 62, np.random.default_rng(0))
    assert len({row.tobytes() for row in z}) == 62
    rng = np.random.default_rng(5)
    v = random_game(rng, 6)
    exact, *_ = shap_from_values(as_value_fn(v), 6, "exact")
    sampled, *_ = shap_from_values(as_value_fn(v), 6, "sampled", budget=62)
    np.testing.assert_allclose(sampled, exact, atol=1e-10)


def test_sampled_mode_is_seeded_and_efficient():
    rng = np.random.default_rng(9)
    v = random_game(rng, 8)
    a, base, full, _ = shap_from_values(as_value_fn(v), 8, "sampled", budget=60, seed=3)
    b, *_ = shap_from_values(as_value_fn(v), 8, "sampled", budget=60, seed=3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a.sum(axis=0), full - base, atol=1e-10)
    with pytest.raises(ValueError):
        shap_from_values(as_value_fn(v), 8, "sampled", budget=4)


def test_kernel_shap_on_face_sampled_close_to_exact(embedder):
    img, _, masks = cached_face(4, "eye_left")
    exact = kernel_shap(img, masks, MaskingStrategy(), embedder, "exact")
    assert exact.n_coalitions == 8192
    np.testing.assert_allclose(exact.phi.sum(axis=0), exact.full - exact.base, atol=1e-9)
    # every other region is already black, so black occlusion makes them dummies
    others = [k for k, n in enumerate(masks.names) if n != "eye_left"]
    assert np.abs(exact.phi[others]).max() < 1e-9
    assert part_importance(exact).ranking()[0] == "eye_left"


def test_part_importance_ranking_ties_are_lexicographic():
    from facexplain.concepts import PartImportance
    imp = PartImportance(("b", "a", "c"), np.array([1.0, 1.0, 2.0]))
    assert imp.ranking() == ["c", "a", "b"]


def test_borda_hand_tally():
    """Hand tally with 2/1/0 points: a = 2+2+1, b = 1+0+2, c = 0+1+0."""
    fused = borda_fuse([("a", "b", "c"), ("a", "c", "b"), ("b", "a", "c")])
    assert fused.borda_scores == {"a": 5, "b": 3, "c": 1}
    assert fused.order == ["a", "b", "c"]


def test_borda_reversal_ties_break_by_importance_then_name():
    fused = borda_fuse([("a", "b", "c"), ("c", "b", "a")])
    assert set(fused.borda_scores.values()) == {2}
    assert fused.order == ["a", "b", "c"]
    imps = [{"a": 0.1, "b": 0.2, "c": 0.3}, {"a": 0.1, "b": 0.2, "c": 0.3}]
    assert borda_fuse([("a", "b", "c"), ("c", "b", "a")], imps).order == ["c", "b", "a"]


def test_borda_single_ranking_is_identity():
    r = ["nose_left", "eye_left", "background", "chin_right"]
    assert borda_fuse([r]).order == r


@settings(max_examples=30, deadline=None)
@given(st.lists(st.permutations(list("abcdef")), min_size=1, max_size=8), st.randoms())
def test_borda_is_permutation_invariant(rankings, rnd):
    shuffled = list(rankings)
    rnd.shuffle(shuffled)
    a, b = borda_fuse(rankings), borda_fuse(shuffled)
    assert a.borda_scores == b.borda_scores and a.order == b.order
    m = 6
    assert sum(a.borda_scores.values()) == len(rankings) * m * (m - 1) // 2


@settings(max_examples=20, deadline=None)
@given(st.lists(st.permutations(list("abcde")), min_size=1, max_size=6))
def test_borda_duplicating_corpus_keeps_order(rankings):
    assert borda_fuse(rankings).order == borda_fuse(rankings + rankings).order


def test_borda_rejects_bad_rankings():
    with pytest.raises(RankingError):
        borda_fuse([])
    with pytest.raises(RankingError):
        borda_fuse([("a", "b"), ("a", "c")])


def test_abbreviations():
    assert expand_abbreviation("CHE_R") == "cheek_right"
    assert expand_abbreviation("M_L") == "mouth_left"
    assert expand_abbreviation("B") == "background"


def test_rigged_corpus_ranks_rigged_region_first(embedder):
    faces = [cached_face(s, "nose_right") for s in (20, 21, 22)]
    ranking = extract_concepts([f[0] for f in faces], [f[1] for f in faces], embedder,
                               mode="sampled", budget=600, n=13)
    assert ranking.order[0] == "nose_right"
    assert ranking.borda_scores["nose_right"] == 3 * 12
    assert sorted(ranking.order) == sorted(faces[0][2].names)


def test_one_image_corpus_equals_its_ranking(embedder):
    img, lm, masks = cached_face(23)
    expect = part_importance(kernel_shap(img, masks, MaskingStrategy(), embedder, "sampled", 600, 0)).ranking()
    got = extract_concepts([img], [lm], embedder, mode="sampled", budget=600, n=13)
    assert got.order == expect


def test_corpus_failures(embedder):
    img, lm, _ = cached_face(24)
    ok = extract_concepts([img, img[:50]], [lm, lm], embedder, mode="sampled", budget=600, n=8)
    assert ok.n_images == 1 and len(ok.order) == 8
    with pytest.raises(CorpusError):
        extract_concepts([img[:50]], [lm], embedder, mode="sampled", budget=600)
    with pytest.raises(CorpusError):
        extract_concepts([], [], embedder)
