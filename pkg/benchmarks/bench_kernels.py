"""Time each hot kernel in its numba and numpy form on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both forms are imported directly, so the ``SIGR_NUMBA`` switch does not
matter here. The numba column excludes compilation (one warm-up call).
"""
import argparse
import time

import numpy as np

from sigr.codebook import _refine_numba, _refine_numpy
from sigr.dense_sift import _orientation_split, _sift_grid_numba, _sift_grid_numpy, gradient_field, make_grid
from sigr.grouping import _dbscan_numba, _dbscan_numpy
from sigr.matching import _dtw_numba, _dtw_numpy
from sigr.sig_features import _drain_top_numba, _drain_top_numpy
from sigr.svm import _gram, _smo_numba, _smo_numpy


def _cases(rng):
    img = rng.random((256, 256))
    img[img > 0.6] = 1.0
    f = gradient_field(img)
    b0, frac = _orientation_split(f)
    origins = make_grid(256, 30).origins
    sift = (f.magnitude, b0, frac, origins)

    x = rng.random((900, 128))
    c = rng.random((256, 128))
    rows = np.repeat(np.arange(900), 4)
    cols = np.tile(np.arange(4), 900)
    refine = (x, c, rows, cols, np.empty(900, dtype=np.int64))

    pts = rng.integers(0, 300, (600, 2)).astype(float)
    seqs = (rng.random((42, 256)), rng.random((42, 256)))
    bg = rng.random((256, 256)) < 0.8

    xs = np.vstack([rng.normal(0, 1, (300, 20)), rng.normal(0.5, 1, (300, 20))])
    y = np.r_[-np.ones(300), np.ones(300)]
    K = _gram(xs, 0.05)
    smo_nb = (K, y, 1.0, 1e-3, 200 * 600, False)
    smo_np = (K.__getitem__, np.ones(600), y, 1.0, 1e-3, 200 * 600, False)

    return [
        ("dense SIFT, 900 patches", _sift_grid_numba, sift, _sift_grid_numpy, sift),
        ("codebook tie refine, 3600 pairs", _refine_numba, refine, _refine_numpy, refine),
        ("DBSCAN, 600 points", _dbscan_numba, (pts, 12.0, 3), _dbscan_numpy, (pts, 12.0, 3)),
        ("DTW, 42x42 x 256", _dtw_numba, seqs, _dtw_numpy, seqs),
        ("reservoir drain, 256x256", _drain_top_numba, (bg,), _drain_top_numpy, (bg,)),
        ("SMO, 600 samples", _smo_numba, smo_nb, _smo_numpy, smo_np),
    ]


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'ratio':>7s}")
    for name, nb, nb_args, npy, np_args in _cases(np.random.default_rng(0)):
        nb(*nb_args)  # compile
        t_nb = _best(nb, nb_args, args.repeat)
        t_np = _best(npy, np_args, args.repeat)
        print(f"{name:34s} {1e3 * t_nb:10.2f} {1e3 * t_np:10.2f} {t_np / t_nb:7.1f}")


if __name__ == "__main__":
    main()
