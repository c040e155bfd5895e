"""Distances between signature features and document ranking."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._accel import njit, pick

MEASURES = ("euclidean", "correlation", "dtw")
HIGHER_IS_BETTER = {"euclidean": False, "correlation": True, "dtw": False}
SUBVECTOR = 256


def _pair(x, y):
    x = np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()
    y = np.asarray(getattr(y, "values", y), dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"feature lengths differ: {x.size} vs {y.size}")
    return x, y


def euclidean(x, y) -> float:
    x, y = _pair(x, y)
    d = x - y
    return math.sqrt(float(np.dot(d, d)))


def correlation(x, y, spearman: bool = False) -> float:
    """Pearson coefficient; -1 (non-match) when either vector is constant."""
    x, y = _pair(x, y)
    if x.size < 2:
        raise ValueError("correlation needs at least two elements")
    if spearman:
        x, y = rankdata(x), rankdata(y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(np.dot(xc, xc)))
    sy = math.sqrt(float(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        return -1.0
    r = float(np.dot(xc, yc)) / (sx * sy)
    return max(-1.0, min(1.0, r))


# --------------------------------------------------------------------- DTW

@njit
def _dtw_numba(xs, ys):
    m = xs.shape[0]
    n = ys.shape[0]
    dim = xs.shape[1]
    D = np.empty((m, n))
    L = np.empty((m, n), dtype=np.int64)
    for i in range(m):
        for j in range(n):
            c = 0.0
            for f in range(dim):
                d = xs[i, f] - ys[j, f]
                c += d * d
            if i == 0 and j == 0:
                D[i, j] = c
                L[i, j] = 1
                continue
            best = np.inf
            bl = 0
            if i > 0 and j > 0:
                best = D[i - 1, j - 1]
                bl = L[i - 1, j - 1]
            if i > 0:
                v = D[i - 1, j]
                if v < best or (v == best and L[i - 1, j] < bl):
                    best = v
                    bl = L[i - 1, j]
            if j > 0:
                v = D[i, j - 1]
                if v < best or (v == best and L[i, j - 1] < bl):
                    best = v
                    bl = L[i, j - 1]
            D[i, j] = best + c
            L[i, j] = bl + 1
    return D[m - 1, n - 1], L[m - 1, n - 1]


def _dtw_numpy(xs, ys):
    m, n = len(xs), len(ys)
    cost = ((xs[:, None, :] - ys[None, :, :]) ** 2).sum(-1)
    D = np.full((m + 1, n + 1), np.inf)
    L = np.zeros((m + 1, n + 1), dtype=np.int64)
    for s in range(m + n - 1):
        i = np.arange(max(0, s - n + 1), min(m - 1, s) + 1)
        j = s - i
        I, J = i + 1, j + 1
        best, bl = D[I - 1, J - 1].copy(), L[I - 1, J - 1].copy()
        for pi, pj in ((I - 1, J), (I, J - 1)):
            v, lv = D[pi, pj], L[pi, pj]
            take = (v < best) | ((v == best) & (lv < bl))
            best = np.where(take, v, best)
            bl = np.where(take, lv, bl)
        if s == 0:
            best, bl = np.zeros(1), np.zeros(1, dtype=np.int64)
        D[I, J] = best + cost[i, j]
        L[I, J] = bl + 1
    return D[m, n], L[m, n]


_dtw = pick(_dtw_numba, _dtw_numpy)


def dtw_with_path(xs, ys) -> tuple[float, int]:
    """(accumulated cost, warping-path length in cells)."""
    xs = np.ascontiguousarray(np.atleast_2d(np.asarray(xs, dtype=np.float64)))
    ys = np.ascontiguousarray(np.atleast_2d(np.asarray(ys, dtype=np.float64)))
    if xs.shape[0] == 0 or ys.shape[0] == 0 or xs.size == 0 or ys.size == 0:
        raise ValueError("DTW needs non-empty sequences")
    if xs.shape[1] != ys.shape[1]:
        raise ValueError("sub-vector dimensions differ")
    cost, length = _dtw(xs, ys)
    return float(cost), int(length)


def dtw(xs, ys) -> float:
    """DTW cost normalized by the length of the optimal warping path.

    Local cost is the squared Euclidean distance between sub-vectors. Among
    equal-cost predecessors the shorter path wins, then diagonal, vertical,
    horizontal in that order.
    """
    if np.ndim(xs) == 1:
        xs = np.asarray(xs, dtype=np.float64)[:, None]
    if np.ndim(ys) == 1:
        ys = np.asarray(ys, dtype=np.float64)[:, None]
    cost, length = dtw_with_path(xs, ys)
    return cost / length


def feature_sequence(f, k: int = SUBVECTOR) -> np.ndarray:
    """Split a pyramid feature into its per-cell ``k``-bin histograms."""
    v = np.asarray(getattr(f, "values", f), dtype=np.float64).ravel()
    if v.size == 0 or v.size % k:
        raise ValueError(f"feature length {v.size} is not a multiple of {k}")
    return v.reshape(-1, k)


# ------------------------------------------------------------ scoring/rank

def score(measure: str, x, y, spearman: bool = False, k: int = SUBVECTOR) -> float:
    if measure == "euclidean":
        return euclidean(x, y)
    if measure == "correlation":
        return correlation(x, y, spearman)
    if measure == "dtw":
        return dtw(feature_sequence(x, k), feature_sequence(y, k))
    raise ValueError(f"measure must be one of {MEASURES}")


def to_distance(measure: str, s: float) -> float:
    """Lower-is-better form of a score (correlation r becomes 1 - r)."""
    return 1.0 - s if HIGHER_IS_BETTER[measure] else s


def from_distance(measure: str, d: float) -> float:
    return 1.0 - d if HIGHER_IS_BETTER[measure] else d


def distance(measure: str, x, y, spearman: bool = False, k: int = SUBVECTOR) -> float:
    return to_distance(measure, score(measure, x, y, spearman, k))


def passes(measure: str, s: float, threshold: float) -> bool:
    return s >= threshold if HIGHER_IS_BETTER[measure] else s <= threshold


@dataclass(frozen=True)
class RankedDoc:
    rank: int
    doc_id: str
    measure: str
    score: float | None  # None when the document had nothing to match
    matched_bbox: tuple | None = None


def rank(query, candidates, measure: str, threshold: float | None = None,
         spearman: bool = False, k: int = SUBVECTOR) -> list[RankedDoc]:
    """Order documents best-first.

    ``candidates`` holds ``(doc_id, item)`` pairs where ``item`` is a feature
    (scored against ``query``), a grouping result, a plain score, or None.
    Ties are broken by doc_id; unmatched documents come last. ``k`` is the
    DTW sub-vector length (the codebook size).
    """
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}")
    qmode = getattr(query, "mode", None)
    rows = []
    for doc_id, item in candidates:
        bbox = None
        if item is None:
            s = None
        elif hasattr(item, "best_distance"):
            s = None if item.best_distance is None else from_distance(measure, item.best_distance)
            bbox = item.best_cluster_bbox
        elif isinstance(item, (int, float, np.floating)):
            s = float(item)
        else:
            mode = getattr(item, "mode", None)
            if qmode is not None and mode is not None and mode != qmode:
                raise ValueError(f"feature mode {mode} does not match query mode {qmode}")
            s = score(measure, query, item, spearman, k)
        if s is not None and threshold is not None and not passes(measure, s, threshold):
            continue
        rows.append((doc_id, s, bbox))
    sign = -1.0 if HIGHER_IS_BETTER[measure] else 1.0
    rows.sort(key=lambda r: (r[1] is None, sign * r[1] if r[1] is not None else 0.0, str(r[0])))
    return [RankedDoc(i + 1, d, measure, s, b) for i, (d, s, b) in enumerate(rows)]


def write_ranked_csv(path, ranked: list[RankedDoc]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "doc_id", "measure", "score", "matched_bbox"])
        for r in ranked:
            w.writerow([r.rank, r.doc_id, r.measure, "" if r.score is None else repr(r.score),
                        "" if r.matched_bbox is None else " ".join(map(str, r.matched_bbox))])


def read_ranked_csv(path) -> list[RankedDoc]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            bbox = tuple(int(v) for v in row["matched_bbox"].split()) if row["matched_bbox"] else None
            out.append(RankedDoc(int(row["rank"]), row["doc_id"], row["measure"],
                                 float(row["score"]) if row["score"] else None, bbox))
    return out
