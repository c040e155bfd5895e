"""Corner extraction, density clustering and iterative grouping/matching."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import ndimage

from ._accel import njit, pick


class CornerPoint(NamedTuple):
    row: int
    col: int
    response: float


@dataclass(frozen=True, eq=False)
class Cluster:
    id: int
    point_ids: np.ndarray
    bbox: tuple[int, int, int, int]


@dataclass
class DbscanResult:
    labels: np.ndarray  # -1 for noise
    clusters: list[Cluster]

    @property
    def noise(self) -> np.ndarray:
        return np.flatnonzero(self.labels < 0)


# ------------------------------------------------------------------ Harris

def gaussian_window(sigma: float) -> np.ndarray:
    """Unnormalized 1-D factor of the circular window exp(-(u^2+v^2) / 2 sigma^2)."""
    radius = int(math.ceil(3 * sigma))
    u = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(u * u) / (2 * sigma * sigma))


def harris_response(img: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    gy, gx = np.gradient(img)
    w = gaussian_window(sigma)

    def smooth(a):
        a = ndimage.correlate1d(a, w, axis=0, mode="constant", cval=0.0)
        return ndimage.correlate1d(a, w, axis=1, mode="constant", cval=0.0)

    sxx = smooth(gx * gx)
    syy = smooth(gy * gy)
    sxy = smooth(gx * gy)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corners(img: np.ndarray, sigma: float = 1.5, k: float = 0.04,
                   rel_threshold: float = 0.01) -> list[CornerPoint]:
    """Local maxima (3x3) of the Harris response above ``rel_threshold * max``.

    Plateaus keep only their first pixel in raster order.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0 < rel_threshold < 1:
        raise ValueError("rel_threshold must lie in (0, 1)")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        return []
    r = harris_response(img, sigma, k)
    top = r.max()
    if top <= 0:
        return []
    peak = (r == ndimage.maximum_filter(r, size=3, mode="constant", cval=-np.inf)) & (r > rel_threshold * top)
    rows, cols = np.nonzero(peak)
    taken = np.zeros_like(peak)
    out = []
    for y, x in zip(rows.tolist(), cols.tolist()):
        y0, x0 = max(y - 1, 0), max(x - 1, 0)
        if taken[y0:y + 2, x0:x + 2].any():
            continue
        taken[y, x] = True
        out.append(CornerPoint(y, x, float(r[y, x])))
    return out


def corner_array(corners) -> np.ndarray:
    if len(corners) == 0:
        return np.zeros((0, 2), dtype=np.float64)
    if isinstance(corners[0], CornerPoint):
        return np.array([(c.row, c.col) for c in corners], dtype=np.float64)
    return np.asarray(corners, dtype=np.float64).reshape(-1, 2)


# ------------------------------------------------------------------ DBSCAN

@njit
def _dbscan_numba(pts, eps, min_points):
    n = pts.shape[0]
    eps2 = eps * eps
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            dy = pts[i, 0] - pts[j, 0]
            dx = pts[i, 1] - pts[j, 1]
            if dy * dy + dx * dx <= eps2:
                counts[i] += 1
    labels = -np.ones(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    cid = 0
    for p in range(n):
        if labels[p] != -1 or counts[p] < min_points:
            continue
        labels[p] = cid
        head = 0
        tail = 0
        queue[tail] = p
        tail += 1
        while head < tail:
            q = queue[head]
            head += 1
            if counts[q] < min_points:
                continue
            for r in range(n):
                if labels[r] != -1:
                    continue
                dy = pts[q, 0] - pts[r, 0]
                dx = pts[q, 1] - pts[r, 1]
                if dy * dy + dx * dx <= eps2:
                    labels[r] = cid
                    queue[tail] = r
                    tail += 1
        cid += 1
    return labels


def _dbscan_numpy(pts, eps, min_points):
    n = len(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    near = (diff ** 2).sum(-1) <= eps * eps
    core = near.sum(1) >= min_points
    labels = -np.ones(n, dtype=np.int64)
    cid = 0
    for p in range(n):
        if labels[p] != -1 or not core[p]:
            continue
        labels[p] = cid
        queue = deque([p])
        while queue:
            q = queue.popleft()
            if not core[q]:
                continue
            fresh = np.flatnonzero(near[q] & (labels == -1))
            labels[fresh] = cid
            queue.extend(fresh.tolist())
        cid += 1
    return labels


_dbscan = pick(_dbscan_numba, _dbscan_numpy)


def dbscan(points, eps: float, min_points: int) -> DbscanResult:
    """Density clustering with Euclidean eps-neighbourhoods (self included).

    Clusters are numbered by their first core point in input order; a border
    point goes to the first cluster that reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_points < 1:
        raise ValueError("min_points must be at least 1")
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 2))
    if len(pts) == 0:
        return DbscanResult(np.zeros(0, dtype=np.int64), [])
    labels = _dbscan(pts, float(eps), int(min_points))
    clusters = []
    for cid in range(int(labels.max()) + 1):
        ids = np.flatnonzero(labels == cid)
        sub = pts[ids]
        lo = np.floor(sub.min(0)).astype(int)
        hi = np.ceil(sub.max(0)).astype(int)
        clusters.append(Cluster(cid, ids, (int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))))
    return DbscanResult(labels, clusters)


# ------------------------------------------------------------ grouping loop

@dataclass
class GroupMatchResult:
    best_distance: float | None  # None: nothing clustered, document unmatched
    best_cluster_bbox: tuple | None = None
    best_cluster: Cluster | None = None
    best_eps: float | None = None
    iterations_used: int = 0
    log: list = field(default_factory=list)  # (eps, cluster_id, bbox, distance)
    iteration_minima: list = field(default_factory=list)  # (eps, min distance of that round)

    @property
    def matched(self) -> bool:
        return self.best_distance is not None


def group_and_match(corners, query_size, cluster_distance: Callable[[Cluster], float],
                    min_points: int = 3, iterations: int = 10,
                    early_stop: bool = True) -> GroupMatchResult:
    """Grow the DBSCAN radius from 10% of the query's larger side in equal
    steps, scoring every cluster against the query, and stop at the first
    round that fails to improve the best distance so far.

    ``cluster_distance`` maps a cluster to a lower-is-better distance. A
    round that produces no clusters is skipped. With ``early_stop=False``
    every round up to the full query size is evaluated.
    """
    pts = corner_array(corners) if not isinstance(corners, np.ndarray) else corners.reshape(-1, 2)
    h, w = query_size
    max_th = float(max(h, w))
    if len(pts) == 0 or max_th <= 0:
        return GroupMatchResult(None)
    init_th = 0.1 * max_th
    res = GroupMatchResult(None)
    prev_min = None
    for step in range(1, iterations + 1):
        eps = init_th * step
        res.iterations_used = step
        clusters = dbscan(pts, eps, min_points).clusters
        if not clusters:
            continue
        round_min = None
        for cl in clusters:
            d = float(cluster_distance(cl))
            res.log.append((eps, cl.id, cl.bbox, d))
            if round_min is None or d < round_min:
                round_min = d
            if res.best_distance is None or res.best_distance >= d:
                res.best_distance = d
                res.best_cluster = cl
                res.best_cluster_bbox = cl.bbox
                res.best_eps = eps
        res.iteration_minima.append((eps, round_min))
        if prev_min is None or prev_min > res.best_distance:
            prev_min = res.best_distance
        elif early_stop:
            break
    return res


def write_log_csv(path, result: GroupMatchResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "cluster_id", "bbox", "distance"])
        for eps, cid, bbox, d in result.log:
            w.writerow([f"{eps:.6f}", cid, " ".join(map(str, bbox)), repr(d)])
