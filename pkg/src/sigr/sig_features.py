"""Foreground / background signature encoding.

The background of a signature is its loops plus the water reservoirs seen
from the four sides. A pixel holds water poured from the top when no
background path using only down/left/right moves leads it to the bottom,
left or right edge of the frame; the other sides follow by symmetry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._accel import njit, pick
from .codebook import Codebook, assign_batch, save_spm, spm_pool
from .dense_sift import describe_image
from .imaging import crop_normalize, tight_bbox

DIRECTIONS = ("top", "bottom", "left", "right")
MODES = ("foreground", "background", "combined")
MODE_CODES = {"foreground": 0, "background": 1, "combined": 2}
_FOUR = ndimage.generate_binary_structure(2, 1)


def find_loops(img: np.ndarray) -> np.ndarray:
    """Background pixels in 4-connected regions that never touch the frame edge."""
    img = np.asarray(img, dtype=bool)
    bg = ~img
    labels, n = ndimage.label(bg, structure=_FOUR)
    if n == 0:
        return np.zeros_like(img)
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    open_ = np.zeros(n + 1, dtype=bool)
    open_[edge] = True
    open_[0] = True
    return ~open_[labels]


@njit
def _drain_top_numba(bg):
    h, w = bg.shape
    drained = np.zeros((h, w), dtype=np.bool_)
    for r in range(h - 1, -1, -1):
        c = 0
        while c < w:
            if not bg[r, c]:
                c += 1
                continue
            start = c
            hit = False
            while c < w and bg[r, c]:
                if r == h - 1 or c == 0 or c == w - 1 or drained[r + 1, c]:
                    hit = True
                c += 1
            if hit:
                for k in range(start, c):
                    drained[r, k] = True
    return drained


def _drain_top_numpy(bg):
    h, w = bg.shape
    drained = np.zeros((h, w), dtype=bool)
    edge = np.zeros(w, dtype=bool)
    edge[0] = edge[-1] = True
    below = np.ones(w, dtype=bool)  # under the bottom row everything drains
    for r in range(h - 1, -1, -1):
        row = bg[r]
        starts = row & ~np.concatenate(([False], row[:-1]))
        run = np.cumsum(starts) * row  # 0 on ink, run id otherwise
        hit = row & (below | edge)
        good = np.bincount(run[hit], minlength=run.max() + 1) > 0
        good[0] = False
        drained[r] = good[run]
        below = drained[r]
    return drained


_drain_top = pick(_drain_top_numba, _drain_top_numpy)


_TO_TOP = {
    "top": (lambda a: a, lambda a: a),
    "bottom": (np.flipud, np.flipud),
    "left": (np.transpose, np.transpose),
    "right": (lambda a: np.flipud(a.T), lambda a: np.flipud(a).T),
}


def water_reservoir(img: np.ndarray, direction: str) -> np.ndarray:
    """Reservoir pixels for water poured from ``direction`` (loops excluded)."""
    if direction not in _TO_TOP:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    img = np.asarray(img, dtype=bool)
    fwd, back = _TO_TOP[direction]
    bg = np.ascontiguousarray(~fwd(img))
    held = bg & ~_drain_top(bg)
    held = np.ascontiguousarray(back(held))
    return held & ~find_loops(img)


def reservoirs(img: np.ndarray) -> dict[str, np.ndarray]:
    out = {d: water_reservoir(img, d) for d in DIRECTIONS}
    out["loops"] = find_loops(img)
    return out


def background_image(img: np.ndarray) -> np.ndarray:
    parts = reservoirs(img)
    out = parts["loops"].copy()
    for d in DIRECTIONS:
        out |= parts[d]
    return out


# ---------------------------------------------------------------- encoding

@dataclass(frozen=True, eq=False)
class SignatureFeature:
    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def __len__(self):
        return len(self.values)


def encode_crop(crop: np.ndarray, cb: Codebook, grid: int = 30,
                normalize: bool = True) -> np.ndarray:
    """Dense SIFT -> words -> spatial pyramid for a normalized square crop."""
    desc = describe_image(crop, grid)
    words = assign_batch(cb.centroids, desc.values).reshape(grid, grid)
    return spm_pool(words, cb.k, normalize)


def _mask_feature(mask, frame_bbox, cb, grid, crop, normalize):
    if not mask.any():
        return np.zeros(21 * cb.k)
    return encode_crop(crop_normalize(mask, frame_bbox, crop), cb, grid, normalize)


def signature_features(img: np.ndarray, cb: Codebook, bg_cb: Codebook | None = None,
                       grid: int = 30, crop: int = 256, normalize: bool = True,
                       reservoir_blocks: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(foreground, background) vectors of a binary signature image.

    Both are taken over the tight box around the ink, so they share one frame.
    An empty background mask gives an all-zero background vector.
    """
    img = np.asarray(img, dtype=bool)
    box = tight_bbox(img)
    if box is None:
        raise ValueError("signature image has no foreground")
    r0, c0, r1, c1 = box
    tight = img[r0:r1 + 1, c0:c1 + 1]
    frame = (0, 0, tight.shape[0] - 1, tight.shape[1] - 1)
    fg = encode_crop(crop_normalize(tight, frame, crop), cb, grid, normalize)
    bg_cb = bg_cb or cb
    if reservoir_blocks:
        parts = reservoirs(tight)
        bg = np.concatenate([_mask_feature(parts[d] | parts["loops"], frame, bg_cb, grid, crop, normalize)
                             for d in DIRECTIONS])
    else:
        bg = _mask_feature(background_image(tight), frame, bg_cb, grid, crop, normalize)
    return fg, bg


def combine(fg: np.ndarray, bg: np.ndarray, mode: str) -> SignatureFeature:
    if mode == "foreground":
        return SignatureFeature(mode, fg)
    if mode == "background":
        return SignatureFeature(mode, bg)
    if mode == "combined":
        return SignatureFeature(mode, np.concatenate([fg, bg]))
    raise ValueError(f"mode must be one of {MODES}")


def signature_feature(img: np.ndarray, cb: Codebook, mode: str = "combined", **kw) -> SignatureFeature:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    fg, bg = signature_features(img, cb, **kw)
    return combine(fg, bg, mode)


def save_feature(path, feat: SignatureFeature) -> None:
    save_spm(path, feat.values, MODE_CODES[feat.mode])
