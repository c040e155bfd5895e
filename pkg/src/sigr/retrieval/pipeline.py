"""Detect -> group -> match -> rank, plus training of the detector."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..codebook import Codebook, assign_batch, kmeans_fit, load_codebook, save_codebook, spm_pool
from ..config import Config, parse_config_text
from ..dense_sift import describe_image
from ..errors import FormatError
from ..grouping import GroupMatchResult, corner_array, group_and_match, harris_corners
from ..imaging import (Component, binarize_denoised, connected_components, crop_normalize,
                       filter_small_components, load_image, page_stroke_width, tight_bbox)
from ..matching import distance, rank
from ..sig_features import MODES, combine, signature_features
from ..svm import OvrModel, SvmModel, load_models, save_models, train_ovr

OTHER = "other"


def stream_seed(seed: int, name: str) -> int:
    """Seed of the named random sub-stream derived from the run seed."""
    return int(np.random.default_rng([int(seed), zlib.crc32(name.encode())]).integers(2 ** 31))


def split_documents(doc_ids, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded train/test split by document; both halves keep the input order."""
    ids = sorted(doc_ids)
    perm = np.random.default_rng(stream_seed(seed, "split")).permutation(len(ids))
    train = {ids[i] for i in perm[:int(round(fraction * len(ids)))]}
    return [d for d in doc_ids if d in train], [d for d in doc_ids if d not in train]


# ------------------------------------------------------------ components

@dataclass(eq=False)
class PageComponents:
    shape: tuple
    components: list[Component]


def binarize_page(img: np.ndarray, cfg: Config) -> np.ndarray:
    """Page ink mask: Otsu after a median filter of ``cfg.binarize_median``."""
    return binarize_denoised(img, cfg.binarize_median)


def page_components(img: np.ndarray, cfg: Config) -> PageComponents:
    """Binarize, label and drop components too small to matter."""
    ink = binarize_page(img, cfg)
    comps = connected_components(ink)
    comps = filter_small_components(comps, page_stroke_width(comps), cfg.filter_k_min)
    return PageComponents(ink.shape, comps)


def component_crop(comp: Component, target: int) -> np.ndarray:
    """The component's own mask, normalized to a ``target`` square."""
    m = comp.mask()
    return crop_normalize(m, (0, 0, m.shape[0] - 1, m.shape[1] - 1), target)


def component_descriptors(comps, cfg: Config) -> list[np.ndarray]:
    return [describe_image(component_crop(c, cfg.crop_detect), cfg.grid_detect).values for c in comps]


def component_features(descs, cb: Codebook, cfg: Config) -> np.ndarray:
    n = cfg.grid_detect
    out = np.empty((len(descs), 21 * cb.k))
    for i, d in enumerate(descs):
        out[i] = spm_pool(assign_batch(cb.centroids, d).reshape(n, n), cb.k, cfg.normalize_histograms)
    return out


def classifier_input(feats: np.ndarray, l2: bool) -> np.ndarray:
    """SVM input: pyramid features, optionally scaled to unit L2 length.

    The weighted, L1-normalized pyramid vectors are so short that an RBF
    kernel with gamma=1 is nearly constant over them; unit length restores
    its resolution without touching the features themselves.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if not l2 or len(feats) == 0:
        return feats
    norm = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.where(norm > 0, norm, 1.0)


def label_components(comps, regions, default: str = "printed") -> list[str]:
    """Ground-truth class of each component: the region holding most of its pixels."""
    labels = []
    for c in comps:
        best, best_n = default, 0
        for r in regions:
            r0, c0, r1, c1 = r.bbox
            p = c.pixels
            n = int(np.count_nonzero((p[:, 0] >= r0) & (p[:, 0] <= r1) & (p[:, 1] >= c0) & (p[:, 1] <= c1)))
            if n * 2 > c.pixel_count and n > best_n:
                best, best_n = r.label, n
        labels.append(best)
    return labels


# ------------------------------------------------------------- detection

@dataclass(eq=False)
class Detector:
    codebook: Codebook
    model: OvrModel
    positive: str = "signature"
    l2_input: bool = True

    @property
    def classes(self) -> list:
        return list(self.model.classes)

    def positive_model(self) -> SvmModel:
        return self.model.models[self.classes.index(self.positive)]

    def classify(self, feats: np.ndarray):
        """(predicted class per row, positive-class decision per row)."""
        if len(feats) == 0:
            return [], np.zeros(0)
        dec = self.model.decision(classifier_input(feats, self.l2_input))
        pos = dec[:, self.classes.index(self.positive)]
        if len(self.classes) == 2:
            other = [c for c in self.classes if c != self.positive][0]
            pred = [self.positive if v > 0 else other for v in pos]
        else:
            pred = [self.classes[i] for i in np.argmax(dec, axis=1)]
        return pred, pos


@dataclass(eq=False)
class Detection:
    shape: tuple
    components: list[Component]
    labels: list
    decision: np.ndarray
    positive: str = "signature"

    @property
    def positives(self) -> list[Component]:
        return [c for c, lab in zip(self.components, self.labels) if lab == self.positive]


def detect_signatures(img: np.ndarray, det: Detector, cfg: Config,
                      page: PageComponents | None = None) -> Detection:
    """Classify every surviving component of a page."""
    page = page or page_components(img, cfg)
    feats = component_features(component_descriptors(page.components, cfg), det.codebook, cfg)
    labels, dec = det.classify(feats)
    return Detection(page.shape, page.components, list(labels), np.asarray(dec), det.positive)


@dataclass
class TrainingSet:
    descriptors: list  # per component, (n*n, 128)
    labels: list


def training_set(pages, cfg: Config) -> TrainingSet:
    """``pages`` yields (gray image, regions) pairs."""
    descs, labels = [], []
    for img, regions in pages:
        comps = page_components(img, cfg).components
        descs.extend(component_descriptors(comps, cfg))
        labels.extend(label_components(comps, regions))
    return TrainingSet(descs, labels)


def fit_codebook(descs, cfg: Config, k: int | None = None, name: str = "kmeans") -> Codebook:
    """K-means over pooled descriptors (flat ones dropped, subsampled if large)."""
    x = np.concatenate([np.asarray(d, dtype=np.float64) for d in descs]) if len(descs) else np.zeros((0, 128))
    x = x[np.linalg.norm(x, axis=1) > 0]
    k = k or cfg.codebook_k
    if len(x) > cfg.kmeans_max_samples:
        pick_ = np.random.default_rng(stream_seed(cfg.seed, name + "-sample")).choice(
            len(x), cfg.kmeans_max_samples, replace=False)
        x = x[np.sort(pick_)]
    return kmeans_fit(x, k, stream_seed(cfg.seed, name), cfg.kmeans_max_iter, cfg.kmeans_tol).codebook


def train_detector(ts: TrainingSet, cfg: Config, positive: str = "signature",
                   classes=None) -> Detector:
    """Codebook + SVM. Without ``classes`` everything but ``positive`` is pooled
    into one negative class; with ``classes`` a one-vs-rest model is trained."""
    if classes is None:
        labels = [lab if lab == positive else OTHER for lab in ts.labels]
        classes = [OTHER, positive]
    else:
        classes = list(classes)
        labels = list(ts.labels)
        missing = [c for c in classes if c not in labels]
        if missing:
            raise ValueError(f"no training components for class(es) {missing}")
        keep = [i for i, lab in enumerate(labels) if lab in classes]
        ts = TrainingSet([ts.descriptors[i] for i in keep], [labels[i] for i in keep])
        labels = ts.labels
    if positive not in labels:
        raise ValueError(f"no training components labelled {positive!r}")
    if len(set(labels)) < 2:
        raise ValueError("training needs at least two classes")
    cb = fit_codebook(ts.descriptors, cfg)
    feats = component_features(ts.descriptors, cb, cfg)
    model = train_ovr(classifier_input(feats, cfg.svm_l2_input), labels, cfg.svm_c, cfg.svm_gamma, stream_seed(cfg.seed, "smo-shuffle"),
                      classes=classes, tol=cfg.svm_tol, max_epochs=cfg.svm_max_epochs,
                      cache_mb=cfg.svm_cache_mb)
    return Detector(cb, model, positive, cfg.svm_l2_input)


# ------------------------------------------------------------- retrieval

@dataclass(eq=False)
class Query:
    image: np.ndarray  # tight binary crop
    fg: np.ndarray
    bg: np.ndarray

    @property
    def size(self) -> tuple:
        return self.image.shape

    def feature(self, mode: str):
        return combine(self.fg, self.bg, mode)


def _features(mask, cb, cfg, bg_cb=None):
    return signature_features(mask, cb, bg_cb, cfg.grid_match, cfg.crop_match,
                              cfg.normalize_histograms, cfg.reservoir_blocks)


def make_query(img: np.ndarray, cb: Codebook, cfg: Config, bg_cb: Codebook | None = None) -> Query:
    """Query from a binary (or gray, then Otsu-binarized) signature image."""
    img = np.asarray(img)
    ink = img if img.dtype == bool else binarize_page(img, cfg)
    box = tight_bbox(ink)
    if box is None:
        raise ValueError("query image has no ink")
    r0, c0, r1, c1 = box
    tight = ink[r0:r1 + 1, c0:c1 + 1]
    fg, bg = _features(tight, cb, cfg, bg_cb)
    return Query(tight, fg, bg)


@dataclass(eq=False)
class PreparedDoc:
    """Detected signature components, their corners and a feature cache."""
    doc_id: str
    components: list[Component]
    corners: np.ndarray  # (n, 2) row, col
    owner: np.ndarray  # index into components for each corner
    cache: dict = field(default_factory=dict)

    def group(self, point_ids) -> tuple:
        return tuple(sorted(set(self.owner[np.asarray(point_ids)].tolist())))

    def group_mask(self, group):
        """Tight binary image of the components in ``group`` and its page bbox."""
        pix = np.concatenate([self.components[i].pixels for i in group])
        lo = pix.min(0)
        hi = pix.max(0)
        m = np.zeros(tuple(hi - lo + 1), dtype=bool)
        m[pix[:, 0] - lo[0], pix[:, 1] - lo[1]] = True
        return m, (int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))

    def features(self, group, cb, cfg, bg_cb=None):
        if group not in self.cache:
            mask, bbox = self.group_mask(group)
            fg, bg = _features(mask, cb, cfg, bg_cb)
            self.cache[group] = (fg, bg, bbox)
        return self.cache[group]


def prepare_document(doc_id: str, detection: Detection, cfg: Config) -> PreparedDoc:
    """Harris corners over the signature-labelled ink only, each tied to the
    nearest signature component."""
    comps = detection.positives
    if not comps:
        return PreparedDoc(doc_id, [], np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    lab = np.zeros(detection.shape, dtype=np.int64)
    for i, c in enumerate(comps):
        lab[c.pixels[:, 0], c.pixels[:, 1]] = i + 1
    r0 = max(0, min(c.bbox[0] for c in comps) - 8)
    c0 = max(0, min(c.bbox[1] for c in comps) - 8)
    r1 = min(lab.shape[0], max(c.bbox[2] for c in comps) + 9)
    c1 = min(lab.shape[1], max(c.bbox[3] for c in comps) + 9)
    sub = lab[r0:r1, c0:c1]
    gray = np.where(sub > 0, 0.0, 1.0)
    pts = corner_array(harris_corners(gray, cfg.harris_sigma, cfg.harris_k, cfg.harris_rel_threshold))
    if len(pts) == 0:
        return PreparedDoc(doc_id, comps, np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    _, (ri, ci) = ndimage.distance_transform_edt(sub == 0, return_indices=True)
    ir = pts[:, 0].astype(int)
    ic = pts[:, 1].astype(int)
    owner = sub[ri[ir, ic], ci[ir, ic]] - 1
    corners = pts + np.array([r0, c0], dtype=np.float64)
    return PreparedDoc(doc_id, comps, corners, owner.astype(np.int64))


def match_document(query: Query, doc: PreparedDoc, measure: str, mode: str, cb: Codebook,
                   cfg: Config, bg_cb=None, early_stop: bool = True) -> GroupMatchResult:
    """Algorithm-1 grouping of one document against the query."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    q = query.feature(mode)

    def cluster_distance(cl):
        fg, bg, _ = doc.features(doc.group(cl.point_ids), cb, cfg, bg_cb)
        return distance(measure, q, combine(fg, bg, mode), cfg.spearman, cb.k)

    res = group_and_match(doc.corners, query.size, cluster_distance, cfg.dbscan_min_points,
                          cfg.grouping_iterations, early_stop)
    if res.best_cluster is not None:
        # report the ink box of the matched components, not of their corners
        res.best_cluster_bbox = doc.features(doc.group(res.best_cluster.point_ids), cb, cfg, bg_cb)[2]
    return res


@dataclass
class RetrievalRun:
    measure: str
    mode: str
    ranked: list
    results: dict  # doc_id -> GroupMatchResult


def rank_documents(query: Query, docs, measure: str, mode: str, cb: Codebook, cfg: Config,
                   bg_cb=None, threshold=None) -> RetrievalRun:
    results = {d.doc_id: match_document(query, d, measure, mode, cb, cfg, bg_cb) for d in docs}
    ranked = rank(query.feature(mode), list(results.items()), measure, threshold, cfg.spearman, cb.k)
    return RetrievalRun(measure, mode, ranked, results)


def prepare_corpus(manifest, det: Detector, cfg: Config, loader=load_image) -> list[PreparedDoc]:
    out = []
    for e in manifest.entries:
        out.append(prepare_document(e.doc_id, detect_signatures(loader(e.path), det, cfg), cfg))
    return out


def retrieve(query_img, manifest, det: Detector, cfg: Config, measure: str = "dtw",
             mode: str = "combined", bg_cb=None, prepared=None) -> RetrievalRun:
    """Rank every document of ``manifest`` against a query signature image."""
    query = make_query(query_img, det.codebook, cfg, bg_cb)
    if prepared is None:
        prepared = prepare_corpus(manifest, det, cfg)
    return rank_documents(query, prepared, measure, mode, det.codebook, cfg, bg_cb)


def logo_mode_retrieve(query_img, manifest, det: Detector, cfg: Config, measure: str = "euclidean",
                       prepared=None) -> RetrievalRun:
    """Logo search: same pipeline, foreground features only; ``det`` should be
    a logo-vs-rest detector."""
    return retrieve(query_img, manifest, det, cfg, measure, "foreground", None, prepared)


# ------------------------------------------------------------- artifacts

CODEBOOK_FILE = "codebook.sbvw"
MODEL_FILE = "svm.ssvm"
CLASSES_FILE = "classes.txt"
CONFIG_FILE = "run.cfg"


def save_artifacts(out_dir, det: Detector, cfg: Config) -> None:
    """Codebook, model records (one per class, class order), class list
    (positive class marked with ``*``) and the run configuration."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_codebook(out / CODEBOOK_FILE, det.codebook)
    save_models(out / MODEL_FILE, det.model.models)
    lines = [("*" if c == det.positive else "") + str(c) for c in det.classes]
    (out / CLASSES_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / CONFIG_FILE).write_text(cfg.replace(svm_l2_input=det.l2_input).to_text(), encoding="utf-8")


def read_classes(path) -> tuple[list, str]:
    classes, positive = [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("*"):
            line = line[1:]
            positive = line
        classes.append(line)
    if len(classes) < 2 or positive is None:
        raise FormatError(f"{path}: need at least two classes and one marked with '*'")
    return classes, positive


def load_artifacts(art_dir) -> tuple[Detector, Config]:
    art = Path(art_dir)
    cfg = parse_config_text((art / CONFIG_FILE).read_text(encoding="utf-8"))
    cb = load_codebook(art / CODEBOOK_FILE)
    models = load_models(art / MODEL_FILE)
    classes, positive = read_classes(art / CLASSES_FILE)
    if len(models) != len(classes):
        raise FormatError(f"{len(models)} model records for {len(classes)} classes")
    return Detector(cb, OvrModel(classes, models), positive, cfg.svm_l2_input), cfg
