import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigr.grouping import (dbscan, gaussian_window, group_and_match, harris_corners, harris_response,
                           write_log_csv)

from oracles import dbscan_naive, harris_peaks, harris_reference, same_partition


# ------------------------------------------------------------------ Harris

def test_window_radius_and_peak():
    w = gaussian_window(1.5)
    assert len(w) == 11 and w[5] == 1.0
    assert np.allclose(w, w[::-1])


def test_blank_image_has_no_corners():
    assert harris_corners(np.ones((30, 30))) == []


def test_straight_edge_has_no_corners():
    img = np.ones((30, 30))
    img[:, 15:] = 0.0
    assert harris_corners(img) == []


def test_square_has_four_corners():
    img = np.ones((40, 40))
    img[10:30, 10:30] = 0.0
    got = harris_corners(img)
    assert len(got) == 4
    rows = sorted({c.row for c in got})
    cols = sorted({c.col for c in got})
    assert len(rows) == 2 and len(cols) == 2
    assert abs(rows[0] - 10) <= 2 and abs(rows[1] - 29) <= 2
    assert abs(cols[0] - 10) <= 2 and abs(cols[1] - 29) <= 2


@pytest.mark.parametrize("seed", range(3))
def test_response_and_peaks_match_reference(seed):
    rng = np.random.default_rng(seed)
    img = np.ones((24, 26))
    for _ in range(3):
        r, c = rng.integers(0, 18, 2)
        img[r:r + rng.integers(3, 8), c:c + rng.integers(3, 8)] = 0.0
    R = harris_response(img, 1.5, 0.04)
    ref = harris_reference(img, 1.5, 0.04)
    assert np.allclose(R, ref, atol=1e-9)
    got = [(c.row, c.col) for c in harris_corners(img, 1.5, 0.04, 0.01)]
    assert got == harris_peaks(ref, 0.01)


def test_plateau_keeps_first_pixel():
    # two equal responses side by side: only the first in raster order survives
    R_img = np.ones((40, 40))
    R_img[10:30, 10:30] = 0.0
    R_img[10:30, 30:31] = 0.0
    got = harris_corners(R_img)
    pts = {(c.row, c.col) for c in got}
    for r, c in pts:
        assert not any((r + a, c + b) in pts for a in (-1, 0, 1) for b in (-1, 0, 1) if a or b)


def test_harris_argument_errors():
    with pytest.raises(ValueError):
        harris_corners(np.ones((5, 5)), sigma=0)
    with pytest.raises(ValueError):
        harris_corners(np.ones((5, 5)), rel_threshold=1.5)


# ------------------------------------------------------------------ DBSCAN

def test_dbscan_two_groups_and_noise():
    pts = [(0, 0), (0, 1), (1, 0), (10, 10), (10, 11), (11, 10), (50, 50)]
    res = dbscan(pts, 1.5, 3)
    assert res.labels.tolist() == [0, 0, 0, 1, 1, 1, -1]
    assert res.noise.tolist() == [6]
    assert res.clusters[1].bbox == (10, 10, 11, 11)


def test_dbscan_min_points_counts_self():
    assert dbscan([(0, 0), (0, 1)], 1.0, 2).labels.tolist() == [0, 0]
    assert dbscan([(0, 0), (0, 5)], 1.0, 1).labels.tolist() == [0, 1]
    assert dbscan([(0, 0), (0, 5)], 1.0, 2).labels.tolist() == [-1, -1]


def test_dbscan_border_goes_to_lowest_cluster():
    # the first point is a border point of both squares
    pts = [(0, 3), (0, 0), (0, 1), (1, 0), (1, 1), (0, 5), (0, 6), (1, 5), (1, 6)]
    res = dbscan(pts, 2.0, 4)
    assert res.labels.tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1]
    assert res.labels.tolist() == dbscan_naive(pts, 2.0, 4).tolist()


def test_dbscan_empty_and_errors():
    assert dbscan(np.zeros((0, 2)), 1.0, 3).clusters == []
    with pytest.raises(ValueError):
        dbscan([(0, 0)], 0.0, 3)
    with pytest.raises(ValueError):
        dbscan([(0, 0)], 1.0, 0)


@pytest.mark.parametrize("seed", range(5))
def test_dbscan_matches_naive(seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 60, (200, 2))
    for eps, mp in [(2.5, 3), (4.5, 5), (7.5, 3)]:
        assert dbscan(pts, eps, mp).labels.tolist() == dbscan_naive(pts, eps, mp).tolist()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_dbscan_permutation_invariant_on_cores(seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 40, (60, 2)).astype(float)
    eps, mp = 4.5, 4
    perm = rng.permutation(len(pts))
    a = dbscan(pts, eps, mp).labels
    b = np.empty_like(a)
    b[perm] = dbscan(pts[perm], eps, mp).labels
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    core = (d <= eps).sum(1) >= mp
    assert same_partition(a[core], b[core])
    assert np.array_equal(a < 0, b < 0)


# ------------------------------------------------------------ grouping loop

def _rounds_oracle(pts, size, dist, iterations=10, min_points=3):
    """Straight-line replay of the stop rule using the naive clustering."""
    best = None
    seen = []
    for step in range(1, iterations + 1):
        eps = 0.1 * max(size) * step
        lab = dbscan_naive(pts, eps, min_points)
        ks = sorted(set(lab.tolist()) - {-1})
        if not ks:
            continue
        vals = [dist(np.flatnonzero(lab == k)) for k in ks]
        seen += vals
        m = min(vals)
        if best is not None and m >= best:
            return best, step, seen
        best = m if best is None else min(best, m)
    return best, iterations, seen


def test_empty_input_unmatched():
    res = group_and_match(np.zeros((0, 2)), (50, 100), lambda c: 0.0)
    assert not res.matched and res.best_distance is None


def test_no_clusters_at_any_radius():
    res = group_and_match([(0, 0)], (10, 10), lambda c: 0.0, min_points=3)
    assert not res.matched and res.iterations_used == 10 and res.log == []


def test_constant_distance_stops_after_second_round():
    pts = np.array([(0, 0), (0, 2), (2, 0), (40, 40), (40, 42), (42, 40)], dtype=float)
    res = group_and_match(pts, (30, 30), lambda c: 1.0)
    assert res.iterations_used == 2
    assert res.best_distance == 1.0
    # ties replace the running best, so the last evaluated cluster wins
    assert res.best_eps == pytest.approx(6.0)
    assert res.best_cluster.id == res.log[-1][1]


@pytest.mark.parametrize("seed", range(6))
def test_stop_rule_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    centres = rng.integers(20, 180, (4, 2))
    pts = np.vstack([c + rng.integers(-8, 9, (6, 2)) for c in centres]).astype(float)
    target = int(rng.integers(5, 20))

    def dist_ids(ids):
        return abs(len(ids) - target) + 0.01 * float(pts[ids, 0].mean())

    res = group_and_match(pts, (40, 80), lambda c: dist_ids(c.point_ids))
    best, used, seen = _rounds_oracle(pts, (40, 80), dist_ids)
    assert res.best_distance == pytest.approx(best, abs=1e-12)
    assert res.iterations_used == used
    assert [d for *_, d in res.log] == pytest.approx(seen)
    assert res.best_distance == min(d for *_, d in res.log)


def test_exhaustive_sweep_logs_every_round():
    rng = np.random.default_rng(1)
    pts = rng.integers(0, 100, (40, 2)).astype(float)
    res = group_and_match(pts, (20, 30), lambda c: float(len(c.point_ids)), early_stop=False)
    assert res.iterations_used == 10
    eps_seen = sorted({e for e, *_ in res.log})
    assert eps_seen[-1] == pytest.approx(30.0)
    assert res.best_distance == min(d for *_, d in res.log)
    assert [m for _, m in res.iteration_minima] == [
        min(d for e, _, _, d in res.log if e == eps) for eps, _ in res.iteration_minima]


def test_log_csv(tmp_path):
    pts = np.array([(0, 0), (0, 2), (2, 0)], dtype=float)
    res = group_and_match(pts, (30, 30), lambda c: 0.5)
    write_log_csv(tmp_path / "log.csv", res)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "eps,cluster_id,bbox,distance"
    assert lines[1] == "3.000000,0,0 0 2 2,0.5"
