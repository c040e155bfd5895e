"""Retrieval and detection evaluation: AP/MAP, PR and ROC curves, confusion matrix."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..matching import HIGHER_IS_BETTER


@dataclass
class EvalCurve:
    kind: str  # "pr" or "roc"
    points: list = field(default_factory=list)  # (threshold, precision, recall) or (fpr, tpr)
    auc: float | None = None


def average_precision(ranked_ids, relevant) -> float:
    """Mean of precision@k over the ranks k holding a relevant document."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("no relevant documents: average precision undefined")
    hits = 0
    total = 0.0
    for k, doc in enumerate(ranked_ids, 1):
        if doc in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


def mean_average_precision(runs) -> float:
    """``runs`` holds (ranked doc ids, relevant ids) pairs."""
    aps = [average_precision(r, rel) for r, rel in runs]
    if not aps:
        raise ValueError("no queries")
    return float(np.mean(aps))


def pr_curve(ranked, relevant, measure: str, thresholds=None) -> EvalCurve:
    """Precision/recall of the documents accepted at each score threshold.

    ``ranked`` holds objects with ``doc_id`` and ``score`` (None = unmatched,
    never accepted). A document is accepted when its score passes the
    threshold in the measure's polarity. With no thresholds given every
    distinct score is used, tightest first. Nothing accepted counts as
    precision 1.
    """
    relevant = set(relevant)
    if not relevant:
        raise ValueError("no relevant documents: recall undefined")
    hib = HIGHER_IS_BETTER[measure]
    scored = [(r.doc_id, r.score) for r in ranked if r.score is not None]
    if thresholds is None:
        thresholds = sorted({s for _, s in scored}, reverse=hib)
    pts = []
    for t in thresholds:
        acc = [d for d, s in scored if (s >= t if hib else s <= t)]
        tp = sum(d in relevant for d in acc)
        prec = tp / len(acc) if acc else 1.0
        pts.append((float(t), prec, tp / len(relevant)))
    return EvalCurve("pr", pts)


def roc_auc(scores, labels) -> EvalCurve:
    """ROC over every distinct score (higher = more positive), trapezoidal AUC.

    Tied scores move the curve diagonally, so an all-tied input gives 0.5.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tpr = np.r_[0.0, tps[last] / n_pos]
    fpr = np.r_[0.0, fps[last] / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return EvalCurve("roc", list(zip(fpr.tolist(), tpr.tolist())), auc)


def confusion_matrix(predictions, truth, classes) -> np.ndarray:
    """Rows = predicted class, columns = true class; each column sums to 1
    (a class with no true samples leaves a zero column)."""
    classes = list(classes)
    predictions = list(predictions)
    truth = list(truth)
    if len(predictions) != len(truth):
        raise ValueError("predictions and truth differ in length")
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)))
    for p, t in zip(predictions, truth):
        if p not in index or t not in index:
            raise ValueError(f"unknown class label {p if p not in index else t!r}")
        m[index[p], index[t]] += 1
    col = m.sum(axis=0, keepdims=True)
    return np.divide(m, col, out=np.zeros_like(m), where=col > 0)


def accuracy(predictions, truth) -> float:
    p = np.asarray(list(predictions), dtype=object)
    t = np.asarray(list(truth), dtype=object)
    if len(p) != len(t) or len(p) == 0:
        raise ValueError("need equal, non-empty prediction and truth lists")
    return float(np.mean(p == t))


# ------------------------------------------------------------------- files

def write_curve_csv(path, curve: EvalCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"] if curve.kind == "pr" else ["fpr", "tpr"])
        for p in curve.points:
            w.writerow([repr(float(v)) for v in p])


def write_confusion_csv(path, matrix, classes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["predicted", *classes])
        for c, row in zip(classes, matrix):
            w.writerow([c, *(f"{v:.6f}" for v in row)])


def write_metrics_csv(path, **values) -> None:
    """Single-row metrics summary (header + one line)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(values))
        w.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in values.values()])
