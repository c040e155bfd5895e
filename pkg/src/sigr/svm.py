"""RBF-kernel SVM trained with SMO, plus one-vs-rest multi-class wrapping.

The solver follows the working-set-of-two scheme with second-order pair
selection (Fan, Chen & Lin 2005, as in LIBSVM).
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit
from .errors import FormatError

TAU = 1e-12


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"vector lengths differ: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def _gram(x: np.ndarray, gamma: float) -> np.ndarray:
    g = x @ x.T
    g = (g + g.T) * 0.5
    sq = np.diag(g).copy()
    d2 = sq[:, None] + sq[None, :] - 2.0 * g
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.exp(-gamma * d2)


@dataclass(eq=False)
class SvmModel:
    support_vectors: np.ndarray  # (m, dim) float32
    coef: np.ndarray  # (m,) alpha_i * y_i
    bias: float
    gamma: float
    c: float
    class_labels: tuple = (-1, 1)

    def __post_init__(self):
        self.support_vectors = np.ascontiguousarray(self.support_vectors, dtype=np.float32)
        self.coef = np.asarray(self.coef, dtype=np.float64)
        if len(self.coef) != len(self.support_vectors):
            raise ValueError("coefficient / support vector count mismatch")

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision(self, x) -> np.ndarray | float:
        """Signed score; accepts one vector or a 2-D batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"feature dim {x.shape[1]} != model dim {self.dim}")
        k = rbf_matrix(x, self.support_vectors.astype(np.float64), self.gamma)
        out = k @ self.coef + self.bias
        return float(out[0]) if single else out

    def predict(self, x) -> np.ndarray:
        s = np.atleast_1d(self.decision(x))
        return np.where(s > 0, self.class_labels[1], self.class_labels[0])


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    converged: bool
    dual_objective: np.ndarray = field(repr=False)


# ------------------------------------------------------------------ solver

@njit
def _smo_numba(K, y, C, eps, max_iter, record):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    hist = np.zeros(max_iter + 1 if record else 1)
    it = 0
    converged = False
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                ytg = y[t] * G[t]
                if ytg > gmax2:
                    gmax2 = ytg
                if i >= 0:
                    gd = gmax + ytg
                    if gd > 0:
                        quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = TAU
                        ob = -(gd * gd) / quad
                        if ob < obj_min:
                            obj_min = ob
                            j = t
        if i < 0 or j < 0 or gmax + gmax2 < eps:
            converged = True
            break
        oi = alpha[i]
        oj = alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - oi
        daj = alpha[j] - oj
        for t in range(n):
            G[t] += (y[t] * y[i] * K[t, i]) * dai + (y[t] * y[j] * K[t, j]) * daj
        it += 1
        if record:
            acc = 0.0
            for t in range(n):
                acc += alpha[t] * (G[t] - 1.0)
            hist[it] = -0.5 * acc
    return alpha, G, it, converged, hist[: it + 1] if record else hist[:0]


class _RowCache:
    """LRU cache of kernel rows bounded by a byte budget."""

    def __init__(self, x: np.ndarray, gamma: float, budget_bytes: float):
        self.x = x
        self.sq = (x * x).sum(1)
        self.gamma = gamma
        self.cap = max(2, int(budget_bytes // (8 * len(x))))
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def __call__(self, i: int) -> np.ndarray:
        row = self.rows.get(i)
        if row is not None:
            self.rows.move_to_end(i)
            return row
        d2 = self.sq + self.sq[i] - 2.0 * (self.x @ self.x[i])
        np.maximum(d2, 0.0, out=d2)
        d2[i] = 0.0
        row = np.exp(-self.gamma * d2)
        self.rows[i] = row
        if len(self.rows) > self.cap:
            self.rows.popitem(last=False)
        return row


def _smo_numpy(row, diag, y, C, eps, max_iter, record):
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    hist = [0.0] if record else []
    it = 0
    converged = False
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        ytg = y * G
        if not up.any() or not low.any():
            converged = True
            break
        vals = np.where(up, -ytg, -np.inf)
        i = int(np.argmax(vals))
        gmax = vals[i]
        gmax2 = np.max(np.where(low, ytg, -np.inf))
        ki = row(i)
        gd = gmax + ytg
        cand = low & (gd > 0)
        quad = diag[i] + diag - 2.0 * ki
        quad[quad <= 0] = TAU
        obj = np.where(cand, -(gd * gd) / quad, np.inf)
        j = int(np.argmin(obj))
        if not cand.any() or gmax + gmax2 < eps:
            converged = True
            break
        kj = row(j)
        oi, oj = alpha[i], alpha[j]
        q = diag[i] + diag[j] - 2.0 * ki[j]
        if q <= 0:
            q = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / q
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            delta = (G[i] - G[j]) / q
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, s - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, s
            if s > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, s - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, s
        dai = alpha[i] - oi
        daj = alpha[j] - oj
        G += (y * y[i] * ki) * dai + (y * y[j] * kj) * daj
        it += 1
        if record:
            hist.append(-0.5 * float((alpha * (G - 1.0)).sum()))
    return alpha, G, it, converged, np.asarray(hist)


def _bias(alpha, G, y, C) -> float:
    ytg = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        rho = float(ytg[free].mean())
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = ytg[ub_mask].min() if ub_mask.any() else np.inf
        lb = ytg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2)
    return -rho


def smo_solve(x: np.ndarray, y: np.ndarray, c: float, gamma: float, tol: float = 1e-3,
              max_epochs: int = 200, cache_mb: float = 256.0, record: bool = False,
              use_numba: bool | None = None) -> SmoResult:
    """Solve the soft-margin dual for labels in {-1, +1}.

    Runs until the maximal KKT violation drops below ``tol`` or after
    ``max_epochs * n`` pair updates.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    max_iter = int(max_epochs) * max(n, 1)
    budget = cache_mb * 2 ** 20
    use_numba = USE_NUMBA if use_numba is None else use_numba
    full = 8.0 * n * n <= budget
    if use_numba and full:
        K = _gram(x, gamma)
        alpha, G, it, conv, hist = _smo_numba(K, y, float(c), float(tol), max_iter, record)
    else:
        if full:
            K = _gram(x, gamma)
            row = K.__getitem__
        else:
            row = _RowCache(x, gamma, budget)
        diag = np.ones(n)
        alpha, G, it, conv, hist = _smo_numpy(row, diag, y, float(c), float(tol), max_iter, record)
    return SmoResult(alpha, _bias(alpha, G, y, c), int(it), bool(conv), hist)


def train_smo(samples, labels, c: float = 1.0, gamma: float = 1.0, seed: int = 0,
              tol: float = 1e-3, max_epochs: int = 200, cache_mb: float = 256.0,
              class_labels=(-1, 1)) -> SvmModel:
    """Train a binary RBF SVM. ``labels`` must be -1/+1 with both present.

    Samples are rounded to float32 first so the stored model reproduces its
    own training-time decision values exactly. ``seed`` shuffles the working
    order, which only affects tie-breaking in pair selection.
    """
    x = np.asarray(samples, dtype=np.float32).astype(np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("samples must be 2-D with one label per row")
    if len(y) < 2 or not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("both classes (+1 and -1) must be present")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    perm = np.random.default_rng(seed).permutation(len(y))
    res = smo_solve(x[perm], y[perm], c, gamma, tol, max_epochs, cache_mb)
    alpha = np.empty_like(res.alpha)
    alpha[perm] = res.alpha
    sv = alpha > 0
    if not sv.any():
        # degenerate: keep one zero-weight vector so the model stays well-formed
        sv[0] = True
    return SvmModel(x[sv], alpha[sv] * y[sv], res.bias, gamma, c, tuple(class_labels))


# ------------------------------------------------------------ one-vs-rest

@dataclass(eq=False)
class OvrModel:
    classes: list
    models: list[SvmModel]

    def decision(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.stack([np.atleast_1d(m.decision(x)) for m in self.models], axis=1)

    def predict(self, x) -> list:
        idx = np.argmax(self.decision(x), axis=1)
        return [self.classes[i] for i in idx]


def train_ovr(samples, labels, c: float = 1.0, gamma: float = 1.0, seed: int = 0,
              classes=None, **kw) -> OvrModel:
    labels = list(labels)
    if classes is None:
        classes = sorted(set(labels), key=str)
    classes = list(classes)
    if len(classes) < 2:
        raise ValueError("one-vs-rest needs at least two classes")
    unknown = set(labels) - set(classes)
    if unknown:
        raise ValueError(f"labels outside the class list: {sorted(map(str, unknown))}")
    lab = np.array([classes.index(v) for v in labels])
    if len(classes) == 2:
        # the two one-vs-rest problems are mirror images of each other
        m = train_smo(samples, np.where(lab == 1, 1, -1), c, gamma, seed, **kw)
        neg = SvmModel(m.support_vectors, -m.coef, -m.bias, m.gamma, m.c, (1, -1))
        return OvrModel(classes, [neg, m])
    models = [train_smo(samples, np.where(lab == k, 1, -1), c, gamma, seed, **kw)
              for k in range(len(classes))]
    return OvrModel(classes, models)


def grid_search(x, y, gammas, cs, seed: int = 0, holdout: float = 0.25, **kw):
    """Holdout accuracy for each (gamma, c) pair: list of (gamma, c, accuracy)."""
    x = np.asarray(x)
    y = np.asarray(y)
    perm = np.random.default_rng(seed).permutation(len(y))
    n_val = max(1, int(round(holdout * len(y))))
    val, tr = perm[:n_val], perm[n_val:]
    out = []
    for g in gammas:
        for c in cs:
            m = train_smo(x[tr], y[tr], c, g, seed, **kw)
            out.append((g, c, float(np.mean(m.predict(x[val]) == y[val]))))
    return out


# -------------------------------------------------------------------- files

def _pack(m: SvmModel) -> bytes:
    head = b"SSVM" + struct.pack("<Iddd II", 1, m.gamma, m.c, m.bias,
                                 len(m.coef), m.dim)
    return head + np.asarray(m.coef, "<f8").tobytes() + np.asarray(m.support_vectors, "<f4").tobytes()


_HEAD = struct.Struct("<Iddd II")


def save_models(path, models) -> None:
    """One or more SSVM records back to back."""
    if isinstance(models, SvmModel):
        models = [models]
    with open(path, "wb") as fh:
        for m in models:
            fh.write(_pack(m))


def load_models(path) -> list[SvmModel]:
    with open(path, "rb") as fh:
        buf = fh.read()
    out = []
    pos = 0
    if not buf:
        raise FormatError("empty SSVM file")
    while pos < len(buf):
        if buf[pos:pos + 4] != b"SSVM":
            raise FormatError("not an SSVM model file")
        if len(buf) < pos + 4 + _HEAD.size:
            raise OSError("truncated SSVM header")
        version, gamma, c, bias, m, dim = _HEAD.unpack_from(buf, pos + 4)
        if version != 1:
            raise FormatError(f"unsupported SSVM version {version}")
        pos += 4 + _HEAD.size
        need = 8 * m + 4 * m * dim
        if len(buf) < pos + need:
            raise OSError("truncated SSVM payload")
        coef = np.frombuffer(buf, "<f8", m, pos).astype(np.float64)
        sv = np.frombuffer(buf, "<f4", m * dim, pos + 8 * m).reshape(m, dim)
        pos += need
        out.append(SvmModel(sv, coef, bias, gamma, c))
    return out


def load_model(path) -> SvmModel:
    return load_models(path)[0]
