import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigr.grouping import GroupMatchResult
from sigr.matching import (RankedDoc, correlation, distance, dtw, dtw_with_path, euclidean,
                           feature_sequence, from_distance, rank, read_ranked_csv, score,
                           write_ranked_csv)
from sigr.sig_features import SignatureFeature

from oracles import dtw_brute


def test_euclidean_values():
    assert euclidean([0, 0], [3, 4]) == 5.0
    assert euclidean([1, 2, 3], [1, 2, 3]) == 0.0
    with pytest.raises(ValueError):
        euclidean([1, 2], [1, 2, 3])


def test_correlation_values():
    assert correlation([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert correlation([1, 1, 1], [1, 2, 3]) == -1.0
    with pytest.raises(ValueError):
        correlation([1.0], [2.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_correlation_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.random(30), rng.random(30)
    assert correlation(x, a * y + b) == pytest.approx(correlation(x, y), abs=1e-9)


def test_spearman_is_rank_based():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert correlation(x, x ** 3, spearman=True) == pytest.approx(1.0)
    assert correlation(x, x ** 3) < 1.0


def test_dtw_single_elements():
    assert dtw([0.0], [5.0]) == 25.0
    assert dtw_with_path([[0.0]], [[5.0]]) == (25.0, 1)


def test_dtw_identical_is_zero():
    xs = np.random.default_rng(0).random((6, 3))
    assert dtw(xs, xs) == 0.0
    assert dtw_with_path(xs, xs)[1] == 6


def test_dtw_stretched_sequence():
    assert dtw([1.0, 2.0, 3.0], [1.0, 1.0, 2.0, 3.0, 3.0]) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_dtw_matches_brute_force(seed, m, n):
    rng = np.random.default_rng(seed)
    # small integers produce many equal-cost paths, exercising the tie-break
    xs = rng.integers(0, 3, (m, 2)).astype(float)
    ys = rng.integers(0, 3, (n, 2)).astype(float)
    norm, cost, length = dtw_brute(xs, ys)
    assert dtw_with_path(xs, ys) == (cost, length)
    assert dtw(xs, ys) == pytest.approx(norm)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dtw_symmetric(seed):
    rng = np.random.default_rng(seed)
    xs, ys = rng.random((7, 4)), rng.random((5, 4))
    assert dtw(xs, ys) == pytest.approx(dtw(ys, xs), abs=1e-12)


def test_dtw_errors():
    with pytest.raises(ValueError):
        dtw_with_path(np.zeros((0, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        dtw_with_path(np.zeros((2, 2)), np.zeros((2, 3)))


def test_feature_sequence_shapes():
    v = np.arange(5376, dtype=float)
    seq = feature_sequence(v)
    assert seq.shape == (21, 256)
    assert np.array_equal(seq.ravel(), v)
    assert feature_sequence(np.zeros(10752)).shape == (42, 256)
    assert feature_sequence(np.zeros(42), k=2).shape == (21, 2)
    with pytest.raises(ValueError):
        feature_sequence(np.zeros(100))


def test_score_dispatch():
    rng = np.random.default_rng(2)
    x, y = rng.random(42), rng.random(42)
    assert score("euclidean", x, y) == euclidean(x, y)
    assert score("correlation", x, y) == correlation(x, y)
    assert score("dtw", x, y, k=2) == dtw(x.reshape(21, 2), y.reshape(21, 2))
    assert distance("correlation", x, y) == pytest.approx(1 - correlation(x, y))
    assert from_distance("correlation", 0.25) == 0.75
    with pytest.raises(ValueError):
        score("cosine", x, y)


def test_rank_orders_and_breaks_ties():
    got = rank(None, [("b", 0.5), ("a", 0.5), ("c", 0.1), ("d", None)], "euclidean")
    assert [r.doc_id for r in got] == ["c", "a", "b", "d"]
    assert [r.rank for r in got] == [1, 2, 3, 4]
    got = rank(None, [("b", 0.5), ("a", 0.9), ("c", 0.1)], "correlation")
    assert [r.doc_id for r in got] == ["a", "b", "c"]


def test_rank_threshold():
    got = rank(None, [("a", 0.2), ("b", 0.8), ("c", None)], "dtw", threshold=0.5)
    assert [r.doc_id for r in got] == ["a", "c"]
    got = rank(None, [("a", 0.2), ("b", 0.8)], "correlation", threshold=0.5)
    assert [r.doc_id for r in got] == ["b"]


def test_rank_scores_features_and_groupings():
    q = SignatureFeature("foreground", np.array([1.0, 0.0, 0.0]))
    near = SignatureFeature("foreground", np.array([0.9, 0.1, 0.0]))
    far = SignatureFeature("foreground", np.array([0.0, 0.0, 1.0]))
    g = GroupMatchResult(0.05, (1, 2, 3, 4))
    got = rank(q, [("far", far), ("near", near), ("grp", g)], "euclidean")
    assert [r.doc_id for r in got] == ["grp", "near", "far"]
    assert got[0].matched_bbox == (1, 2, 3, 4)
    with pytest.raises(ValueError):
        rank(q, [("x", SignatureFeature("combined", np.zeros(3)))], "euclidean")
    with pytest.raises(ValueError):
        rank(q, [], "manhattan")


def test_ranked_csv_round_trip(tmp_path):
    rows = [RankedDoc(1, "a", "dtw", 0.125, (1, 2, 3, 4)), RankedDoc(2, "b", "dtw", None)]
    write_ranked_csv(tmp_path / "r.csv", rows)
    assert read_ranked_csv(tmp_path / "r.csv") == rows
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "rank,doc_id,measure,score,matched_bbox"
