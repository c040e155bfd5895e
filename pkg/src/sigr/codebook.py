"""Visual vocabulary, word assignment and spatial-pyramid pooling."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._accel import njit, pick
from .errors import FormatError

LEVELS = 3
LEVEL_WEIGHTS = (0.25, 0.25, 0.5)
CELLS_PER_LEVEL = tuple(4 ** l for l in range(LEVELS))
N_CELLS = sum(CELLS_PER_LEVEL)  # 21


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray  # (k, dim)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class KMeansResult:
    codebook: Codebook
    labels: np.ndarray
    objective: list[float]  # after each assignment step
    iterations: int


# ---------------------------------------------------------------- assignment

@njit
def _refine_numba(x, c, cand_rows, cand_cols, best):
    # exact squared distances for near-tied candidates, ties to lowest index
    cur_row = -1
    best_d = 0.0
    for t in range(cand_rows.shape[0]):
        i = cand_rows[t]
        j = cand_cols[t]
        d = 0.0
        for f in range(x.shape[1]):
            diff = x[i, f] - c[j, f]
            d += diff * diff
        if i != cur_row:
            cur_row = i
            best_d = d
            best[i] = j
        elif d < best_d:
            best_d = d
            best[i] = j
    return best


def _refine_numpy(x, c, cand_rows, cand_cols, best):
    d = ((x[cand_rows] - c[cand_cols]) ** 2).sum(axis=1)
    # candidates arrive sorted by (row, col); lexsort keeps the lowest col on ties
    order = np.lexsort((cand_cols, d, cand_rows))
    rows_sorted = cand_rows[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = rows_sorted[1:] != rows_sorted[:-1]
    best[rows_sorted[first]] = cand_cols[order][first]
    return best


_refine = pick(_refine_numba, _refine_numpy)


def assign_batch(centroids: np.ndarray, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Nearest centroid index for every row of ``x`` (squared Euclidean, ties low).

    Distances are screened with one matrix product, then every centroid
    within round-off of the row minimum is re-scored exactly.
    """
    c = np.ascontiguousarray(centroids, dtype=np.float64)
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    if x.shape[1] != c.shape[1]:
        raise ValueError(f"descriptor dim {x.shape[1]} != codebook dim {c.shape[1]}")
    cc = (c * c).sum(axis=1)
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        xx = (xs * xs).sum(axis=1)
        d = xx[:, None] - 2.0 * (xs @ c.T) + cc[None, :]
        dmin = d.min(axis=1)
        slack = 1e-9 * (xx + cc.max()) + 1e-12
        rows, cols = np.nonzero(d <= (dmin + slack)[:, None])
        best = np.empty(len(xs), dtype=np.int64)
        out[s:s + chunk] = _refine(xs, c, rows.astype(np.int64), cols.astype(np.int64), best)
    return out


def assign(cb: Codebook, d: np.ndarray) -> int:
    return int(assign_batch(cb.centroids, np.asarray(d)[None, :])[0])


def _sq_dist_to(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return ((x - centroids[labels]) ** 2).sum(axis=1)


# ------------------------------------------------------------------ k-means

def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; take any point not yet chosen
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[i] = x[idx]
        np.minimum(closest, ((x - centers[i]) ** 2).sum(axis=1), out=closest)
    return centers


def kmeans_fit(descs: np.ndarray, k: int, seed: int, max_iter: int = 100,
               tol: float = 1e-4) -> KMeansResult:
    """Lloyd's algorithm from a k-means++ start.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    rounds. A cluster that empties out is re-seeded at the point farthest
    from its own centroid.
    """
    x = np.ascontiguousarray(descs, dtype=np.float64)
    if x.ndim != 2 or len(x) < k:
        raise ValueError(f"need at least k={k} points, got {len(x)}")
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    history = []
    labels = assign_batch(centroids, x)
    it = 0
    for it in range(1, max_iter + 1):
        dist = _sq_dist_to(x, centroids, labels)
        history.append(float(dist.sum()))
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        new = centroids.copy()
        live = counts > 0
        new[live] = sums[live] / counts[live, None]
        empty = np.flatnonzero(~live)
        if empty.size:
            far = np.argsort(-dist, kind="stable")
            taken = 0
            for j in empty:
                new[j] = x[far[taken]]
                taken += 1
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        labels = assign_batch(centroids, x)
        if shift < tol:
            break
    history.append(float(_sq_dist_to(x, centroids, labels).sum()))
    return KMeansResult(Codebook(centroids), labels, history, it)


# ---------------------------------------------------------------- pooling

def cell_bounds(n: int, level: int) -> list[tuple[int, int]]:
    """Half-open grid index ranges of the ``2**level`` cells along one side."""
    parts = 2 ** level
    return [((c * n) // parts, ((c + 1) * n) // parts) for c in range(parts)]


def bof_histogram(words: np.ndarray, cell, k: int, normalize: bool = True) -> np.ndarray:
    """Word counts among the grid patches inside ``cell``.

    ``cell`` is ``(row0, row1, col0, col1)`` half-open in grid coordinates.
    With ``normalize`` the counts are divided by the patch count of the whole
    grid, so sibling cells add up to their parent.
    """
    r0, r1, c0, c1 = cell
    n_rows, n_cols = words.shape
    if not (0 <= r0 <= r1 <= n_rows and 0 <= c0 <= c1 <= n_cols):
        raise ValueError(f"cell {cell} outside a {words.shape} grid")
    h = np.bincount(words[r0:r1, c0:c1].ravel(), minlength=k)[:k].astype(np.float64)
    if normalize:
        h /= words.size
    return h


def level_histograms(words: np.ndarray, k: int, normalize: bool = True) -> list[np.ndarray]:
    """Unweighted per-level cell histograms, each of shape (4**l, k)."""
    words = np.asarray(words)
    n = words.shape[0]
    if words.ndim != 2 or words.shape[1] != n:
        raise ValueError("word map must be a square grid")
    out = []
    for level in range(LEVELS):
        b = cell_bounds(n, level)
        out.append(np.stack([bof_histogram(words, (r0, r1, c0, c1), k, normalize)
                             for (r0, r1) in b for (c0, c1) in b]))
    return out


def spm_pool(words: np.ndarray, k: int, normalize: bool = True) -> np.ndarray:
    """Concatenate 1 + 4 + 16 cell histograms, level-major and row-major,
    each scaled by its level weight (1/4, 1/4, 1/2)."""
    hists = level_histograms(words, k, normalize)
    return np.concatenate([w * h.ravel() for w, h in zip(LEVEL_WEIGHTS, hists)])


def histogram_intersection(hx, hy) -> float:
    hx = np.asarray(hx, dtype=np.float64)
    hy = np.asarray(hy, dtype=np.float64)
    if hx.shape != hy.shape:
        raise ValueError(f"histogram shapes differ: {hx.shape} vs {hy.shape}")
    return float(np.minimum(hx, hy).sum())


def level_intersections(wx: np.ndarray, wy: np.ndarray, k: int,
                        normalize: bool = True) -> tuple[float, float, float]:
    """(I0, I1, I2): summed intersections of corresponding cells per level."""
    hx = level_histograms(wx, k, normalize)
    hy = level_histograms(wy, k, normalize)
    return tuple(histogram_intersection(a, b) for a, b in zip(hx, hy))


def pyramid_match_kernel(x, y=None, k: int | None = None, normalize: bool = True) -> float:
    """Three-level pyramid match kernel.

    Accepts either an ``(I0, I1, I2)`` triple or two word maps (with ``k``).
    Newly matched pairs at each finer level are weighted down by half.
    """
    if y is None:
        i0, i1, i2 = x
    else:
        if k is None:
            raise ValueError("k is required when passing word maps")
        i0, i1, i2 = level_intersections(x, y, k, normalize)
    return i2 + 0.5 * (i1 - i2) + 0.25 * (i0 - i1)


# -------------------------------------------------------------------- files

def save_codebook(path, cb: Codebook) -> None:
    c = np.asarray(cb.centroids, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"SBVW" + struct.pack("<III", 1, cb.k, cb.dim) + c.tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != b"SBVW":
        raise FormatError("not an SBVW codebook file")
    if len(buf) < 16:
        raise OSError("truncated codebook header")
    version, k, dim = struct.unpack_from("<III", buf, 4)
    if version != 1:
        raise FormatError(f"unsupported codebook version {version}")
    if len(buf) < 16 + 4 * k * dim:
        raise OSError("truncated codebook payload")
    c = np.frombuffer(buf, dtype="<f4", count=k * dim, offset=16).reshape(k, dim)
    return Codebook(c.astype(np.float64))


def save_spm(path, values: np.ndarray, mode: int | None = None) -> None:
    """SPMF file; ``mode`` (0 fg, 1 bg, 2 combined) adds one header byte."""
    v = np.asarray(values, dtype="<f4").ravel()
    head = b"SPMF" + struct.pack("<I", len(v))
    if mode is not None:
        head += struct.pack("<B", mode)
    with open(path, "wb") as fh:
        fh.write(head + v.tobytes())


def load_spm(path) -> tuple[np.ndarray, int | None]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != b"SPMF":
        raise FormatError("not an SPMF feature file")
    if len(buf) < 8:
        raise OSError("truncated SPMF header")
    (n,) = struct.unpack_from("<I", buf, 4)
    if len(buf) == 8 + 4 * n:
        mode, off = None, 8
    elif len(buf) == 9 + 4 * n:
        mode, off = buf[8], 9
    elif len(buf) < 8 + 4 * n:
        raise OSError("truncated SPMF payload")
    else:
        raise FormatError("SPMF length does not match its header")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64), mode
