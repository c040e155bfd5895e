"""Synthetic signed-document corpus.

Each identity owns a base signature made of 3-6 cubic Bezier strokes, at
least one of which closes a loop. Every document re-draws that signature
with jittered control points and places it under a few lines of 5x7 bitmap
"printed" text. Optional extras: handwritten scribble lines, geometric
logos and Gaussian-noise twins of every page.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..imaging import add_gaussian_noise, binarize_denoised, save_image, tight_bbox
from ..sig_features import background_image
from .font import CHARS, GLYPH_H, GLYPH_W, glyph
from .manifest import CorpusManifest, ManifestEntry, Region, write_manifest


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named purpose (stable across runs)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])


@dataclass
class SynthSpec:
    identities: int = 20
    docs_per_identity: int = 10
    page_h: int = 800
    page_w: int = 600
    jitter: float = 2.0  # std of control-point jitter, pixels
    text_lines: tuple = (3, 4)
    line_chars: tuple = (6, 9)
    handwritten_lines: int = 0
    logos: int = 0
    noise: tuple = ()
    seed: int = 0


@dataclass
class SignatureDesign:
    ctrl: np.ndarray  # (strokes, 4, 2) row, col
    linked: np.ndarray  # stroke starts where the previous one ended
    radius: float


@dataclass
class SynthDoc:
    doc_id: str
    page: np.ndarray
    identity: str | None
    bbox: tuple | None
    regions: list = field(default_factory=list)  # (label, bbox)


# ---------------------------------------------------------------- drawing

def _bezier(ctrl: np.ndarray, num: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, num)[:, None]
    p0, p1, p2, p3 = ctrl
    return ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t * t * p2 + t ** 3 * p3


def stamp(points: np.ndarray, radius: float):
    """Rasterize a disk of ``radius`` at every point. Returns (mask, origin)."""
    rad = int(np.ceil(radius)) + 1
    lo = np.floor(points.min(0)).astype(int) - rad
    hi = np.ceil(points.max(0)).astype(int) + rad
    mask = np.zeros(tuple(hi - lo + 1), dtype=bool)
    off = np.stack(np.meshgrid(np.arange(-rad, rad + 1), np.arange(-rad, rad + 1), indexing="ij"), -1).reshape(-1, 2)
    base = np.floor(points).astype(int)
    cand = base[:, None, :] + off[None, :, :]
    inside = ((cand - points[:, None, :]) ** 2).sum(-1) <= radius * radius
    pix = cand[inside] - lo
    mask[pix[:, 0], pix[:, 1]] = True
    return mask, lo


def draw_strokes(ctrl: np.ndarray, radius: float):
    pts = []
    for c in ctrl:
        length = np.linalg.norm(np.diff(c, axis=0), axis=1).sum()
        pts.append(_bezier(c, max(24, int(length * 3))))
    return stamp(np.concatenate(pts), radius)


def _random_design(rng: np.random.Generator) -> SignatureDesign:
    h = rng.uniform(55, 95)
    w = rng.uniform(150, 240)
    n = int(rng.integers(3, 7))
    strokes, linked = [], []
    cursor = np.array([rng.uniform(0.3, 0.7) * h, rng.uniform(0, 0.15) * w])
    n_loops = 0
    for i in range(n):
        link = i > 0 and rng.random() < 0.6
        if not link:
            cursor = np.array([rng.uniform(0.2, 0.8) * h, rng.uniform(0, 0.85) * w])
        p0 = cursor.copy()
        if rng.random() < 0.5 or (i == n - 1 and n_loops == 0):
            s = rng.uniform(40, 65)
            flip = 1.0 if rng.random() < 0.5 else -1.0
            unit = np.array([[0.0, 0.0], [-1.5 * flip, 2.0], [-1.5 * flip, -1.0], [0.0, 1.0]])
            c = p0 + s * unit
            n_loops += 1
        else:
            step = np.array([rng.uniform(-0.5, 0.5) * h, rng.uniform(0.15, 0.4) * w])
            p3 = p0 + step
            p1 = p0 + step / 3 + rng.normal(0, 0.35 * h, 2)
            p2 = p0 + 2 * step / 3 + rng.normal(0, 0.35 * h, 2)
            c = np.stack([p0, p1, p2, p3])
        strokes.append(c)
        linked.append(link)
        cursor = c[3].copy()
    return SignatureDesign(np.array(strokes), np.array(linked), float(rng.uniform(1.1, 1.7)))


def design_signature(seed: int, identity: int) -> SignatureDesign:
    """Base signature of one identity, redrawn until it has background structure."""
    rng = substream(seed, "signature", identity)
    for _ in range(50):
        d = _random_design(rng)
        mask, _ = draw_strokes(d.ctrl, d.radius)
        if background_image(_tight(mask)).any():
            return d
    raise RuntimeError("could not draw a signature with loops")  # pragma: no cover


def _tight(mask):
    r0, c0, r1, c1 = tight_bbox(mask)
    return mask[r0:r1 + 1, c0:c1 + 1]


def jittered(design: SignatureDesign, rng: np.random.Generator, amount: float) -> SignatureDesign:
    ctrl = design.ctrl + rng.normal(0.0, amount, design.ctrl.shape)
    for i in range(1, len(ctrl)):
        if design.linked[i]:
            ctrl[i, 0] = ctrl[i - 1, 3]
    return SignatureDesign(ctrl, design.linked, design.radius)


def render_signature(design: SignatureDesign) -> np.ndarray:
    return _tight(draw_strokes(design.ctrl, design.radius)[0])


def _scribble(rng, height: float, width: float):
    """One handwritten-looking word: a chain of small wavy strokes."""
    n = int(rng.integers(3, 6))
    pts = []
    x = 0.0
    for _ in range(n):
        dx = width / n
        c = np.array([[height * rng.uniform(0.3, 0.7), x],
                      [height * rng.uniform(-0.2, 0.4), x + dx * rng.uniform(0.1, 0.5)],
                      [height * rng.uniform(0.6, 1.2), x + dx * rng.uniform(0.5, 0.9)],
                      [height * rng.uniform(0.3, 0.7), x + dx]])
        pts.append(_bezier(c, 40))
        x += dx
    return _tight(stamp(np.concatenate(pts), 0.9)[0])


def logo_design(seed: int, index: int) -> np.ndarray:
    """Filled geometric mark: disk, ring, box or diamond with a notch."""
    rng = substream(seed, "logo", index)
    size = int(rng.integers(56, 90))
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    kind = index % 4
    r = size / 2.0
    if kind == 0:
        m = xx ** 2 + yy ** 2 <= r * r
        m &= ~((np.abs(xx) < r * 0.25) & (yy > 0))
    elif kind == 1:
        rr = np.hypot(xx, yy)
        m = (rr <= r) & (rr >= r * 0.55)
        m |= (np.abs(yy) < r * 0.15) & (np.abs(xx) < r * 0.55)
    elif kind == 2:
        m = (np.abs(xx) < r * 0.95) & (np.abs(yy) < r * 0.7)
        m &= ~((np.abs(xx) < r * 0.5) & (np.abs(yy) < r * 0.3))
    else:
        m = np.abs(xx) + np.abs(yy) <= r
        m &= ~((np.abs(xx) + np.abs(yy) <= r * 0.45))
    if rng.random() < 0.5:
        m = m.T
    return m


# ---------------------------------------------------------------- layout

def _paint(page, mask, top, left, ink):
    h, w = mask.shape
    region = page[top:top + h, left:left + w]
    region[mask[:region.shape[0], :region.shape[1]]] = ink
    return (top, left, top + h - 1, left + w - 1)


def _text_lines(rng, page, spec, row0, row1, col0, col1):
    lines = int(rng.integers(spec.text_lines[0], spec.text_lines[1] + 1))
    row = row0
    for _ in range(lines):
        scale = int(rng.integers(2, 4))
        gh, gw = GLYPH_H * scale, GLYPH_W * scale
        if row + gh > row1:
            break
        n = int(rng.integers(spec.line_chars[0], spec.line_chars[1] + 1))
        col = col0 + int(rng.integers(0, 40))
        ink = rng.uniform(0.0, 0.2)
        for _ in range(n):
            if col + gw > col1:
                break
            if rng.random() < 0.15:
                col += gw + scale  # word gap
                continue
            _paint(page, glyph(CHARS[int(rng.integers(len(CHARS)))], scale), row, col, ink)
            col += gw + 2 * scale
        row += gh + int(rng.integers(3, 6)) * scale


def render_document(spec: SynthSpec, identity: int, instance: int,
                    design: SignatureDesign) -> SynthDoc:
    doc_index = identity * spec.docs_per_identity + instance
    rng = substream(spec.seed, "page", doc_index)
    page = np.full((spec.page_h, spec.page_w), rng.uniform(0.93, 1.0))
    regions = []
    sig_zone = spec.page_h - 220
    text_bottom = sig_zone - 20
    logo_w = 0
    if spec.logos:
        logo = logo_design(spec.seed, doc_index % spec.logos)
        top, left = 30, spec.page_w - logo.shape[1] - 30
        bbox = _paint(page, logo, top, left, rng.uniform(0.0, 0.15))
        regions.append(("logo", bbox))
        logo_w = logo.shape[1] + 50
    text_end = text_bottom
    if spec.handwritten_lines:
        text_end = text_bottom - 60 * spec.handwritten_lines
    _text_lines(rng, page, spec, 40, text_end, 30, spec.page_w - 30 - logo_w)
    for k in range(spec.handwritten_lines):
        row = text_end + 10 + 60 * k
        col = 30
        while col < spec.page_w - 140:
            word = _scribble(rng, rng.uniform(16, 24), rng.uniform(50, 100))
            if col + word.shape[1] > spec.page_w - 30:
                break
            bbox = _paint(page, word, row, col, rng.uniform(0.05, 0.25))
            regions.append(("handwritten", bbox))
            col += word.shape[1] + int(rng.integers(15, 30))
    sig = render_signature(jittered(design, rng, spec.jitter))
    sh, sw = sig.shape
    top = sig_zone + int(rng.integers(10, max(11, 200 - sh)))
    left = int(rng.integers(20, max(21, spec.page_w - sw - 20)))
    bbox = _paint(page, sig, top, left, rng.uniform(0.05, 0.25))
    regions.append(("signature", bbox))
    ident = f"id{identity:03d}"
    return SynthDoc(f"{ident}_doc{instance:02d}", page, ident, bbox, regions)


def render_corpus(spec: SynthSpec) -> list[SynthDoc]:
    docs = []
    for ident in range(spec.identities):
        design = design_signature(spec.seed, ident)
        for inst in range(spec.docs_per_identity):
            docs.append(render_document(spec, ident, inst, design))
    return docs


def query_image(doc: SynthDoc, median: int = 3) -> np.ndarray:
    """Binary signature crop taken from the document's own page.

    ``median`` should match the pipeline's ``binarize_median`` so the crop
    is exactly what the page binarization sees.
    """
    r0, c0, r1, c1 = doc.bbox
    return binarize_denoised(doc.page, median)[r0:r1 + 1, c0:c1 + 1]


def noisy_page(doc: SynthDoc, variance: float, seed: int, index: int) -> np.ndarray:
    return add_gaussian_noise(doc.page, variance, int(substream(seed, f"noise{variance}", index).integers(2 ** 31)))


def generate_corpus(out_dir, spec: SynthSpec, median: int = 3) -> CorpusManifest:
    """Write pages, manifest, regions, queries and any noisy twins under ``out_dir``."""
    out = Path(out_dir)
    (out / "docs").mkdir(parents=True, exist_ok=True)
    (out / "queries").mkdir(exist_ok=True)
    docs = render_corpus(spec)
    entries, regions = [], []
    for d in docs:
        p = out / "docs" / f"{d.doc_id}.pgm"
        save_image(p, d.page)
        entries.append(ManifestEntry(d.doc_id, p, d.identity, d.bbox))
        regions.extend(Region(d.doc_id, lab, bb) for lab, bb in d.regions)
    manifest = CorpusManifest(entries, regions)
    write_manifest(out / "manifest.csv", manifest)
    seen = set()
    with open(out / "queries.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("identity,path,source_doc\n")
        for d in docs:
            if d.identity in seen:
                continue
            seen.add(d.identity)
            q = out / "queries" / f"{d.identity}.pgm"
            save_image(q, query_image(d, median))
            fh.write(f"{d.identity},queries/{d.identity}.pgm,{d.doc_id}\n")
    for var in spec.noise:
        sub = out / f"docs_noise{var}"
        sub.mkdir(exist_ok=True)
        noisy = []
        for i, d in enumerate(docs):
            p = sub / f"{d.doc_id}.pgm"
            save_image(p, noisy_page(d, var, spec.seed, i))
            noisy.append(ManifestEntry(d.doc_id, p, d.identity, d.bbox))
        write_manifest(out / f"manifest_noise{var}.csv", CorpusManifest(noisy, regions))
    return manifest
