"""The numba kernels and their numpy fallbacks must agree."""
import numpy as np
import pytest

from sigr.codebook import _refine_numba, _refine_numpy
from sigr.dense_sift import _orientation_split, _sift_grid_numba, _sift_grid_numpy, gradient_field, make_grid
from sigr.grouping import _dbscan_numba, _dbscan_numpy
from sigr.matching import _dtw_numba, _dtw_numpy
from sigr.sig_features import _drain_top_numba, _drain_top_numpy
from sigr.svm import rbf_matrix, smo_solve

from oracles import dual_objective


@pytest.mark.parametrize("seed", range(3))
def test_sift_grid(seed):
    img = np.random.default_rng(seed).random((64, 64))
    img[img > 0.7] = 1.0
    f = gradient_field(img)
    b0, frac = _orientation_split(f)
    origins = make_grid(64, 7).origins
    a = _sift_grid_numba(f.magnitude, b0, frac, origins)
    b = _sift_grid_numpy(f.magnitude, b0, frac, origins)
    assert np.max(np.abs(a - b)) < 1e-12


def test_refine():
    rng = np.random.default_rng(0)
    c = rng.integers(0, 3, (12, 4)).astype(float)
    x = rng.integers(0, 3, (30, 4)).astype(float)
    rows, cols = np.meshgrid(np.arange(30), np.arange(12), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    a = _refine_numba(x, c, rows, cols, np.empty(30, dtype=np.int64))
    b = _refine_numpy(x, c, rows, cols, np.empty(30, dtype=np.int64))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(3))
def test_dbscan(seed):
    pts = np.random.default_rng(seed).integers(0, 50, (150, 2)).astype(float)
    for eps, mp in [(2.5, 3), (5.0, 6)]:
        assert np.array_equal(_dbscan_numba(pts, eps, mp), _dbscan_numpy(pts, eps, mp))


@pytest.mark.parametrize("shape", [(1, 1), (1, 7), (6, 1), (9, 13)])
def test_dtw(shape):
    rng = np.random.default_rng(sum(shape))
    xs = rng.integers(0, 3, (shape[0], 3)).astype(float)
    ys = rng.integers(0, 3, (shape[1], 3)).astype(float)
    ca, la = _dtw_numba(xs, ys)
    cb, lb = _dtw_numpy(xs, ys)
    assert la == lb and abs(ca - cb) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_drain(seed):
    bg = np.random.default_rng(seed).random((17, 23)) < 0.6
    assert np.array_equal(_drain_top_numba(bg), _drain_top_numpy(bg))


def test_smo():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0, 1, (25, 3)), rng.normal(1.2, 1, (25, 3))])
    y = np.r_[-np.ones(25), np.ones(25)]
    a = smo_solve(x, y, 1.0, 0.5, use_numba=True)
    b = smo_solve(x, y, 1.0, 0.5, use_numba=False)
    K = rbf_matrix(x, x, 0.5)
    assert abs(dual_objective(a.alpha, y, K) - dual_objective(b.alpha, y, K)) < 1e-9
    assert np.allclose(a.alpha, b.alpha, atol=1e-8) and abs(a.bias - b.bias) < 1e-8


def test_smo_row_cache_path():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal(0, 1, (40, 3)), rng.normal(1.0, 1, (40, 3))])
    y = np.r_[-np.ones(40), np.ones(40)]
    full = smo_solve(x, y, 1.0, 1.0, use_numba=False)
    # a budget far below n*n doubles forces on-demand kernel rows
    rows = smo_solve(x, y, 1.0, 1.0, use_numba=False, cache_mb=0.01)
    assert np.allclose(full.alpha, rows.alpha, atol=1e-8)
