"""Dense-grid SIFT descriptors.

Upright, single-scale descriptors on a regular grid of 16x16 patches: 4x4
spatial cells times 8 orientation bins, Gaussian-weighted magnitudes with
bilinear spatial and linear orientation interpolation, then the usual
normalize / clamp at 0.2 / renormalize.
"""
from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np

from ._accel import njit, pick
from .errors import FormatError

PATCH = 16
CELLS = 4
BINS = 8
DIM = CELLS * CELLS * BINS
CLAMP = 0.2
SIGMA = PATCH / 2.0
# raw descriptors below this norm come from resampling round-off, not ink
FLAT_EPS = 1e-9


class GradField(NamedTuple):
    magnitude: np.ndarray
    orientation: np.ndarray  # radians in [0, 2pi)


class DenseGrid(NamedTuple):
    n: int
    centers: np.ndarray  # (n*n, 2) float row, col in row-major grid order
    origins: np.ndarray  # (n*n, 2) int top-left pixel of each patch
    patch: int = PATCH


class Descriptors(NamedTuple):
    values: np.ndarray  # (count, 128)
    centers: np.ndarray  # (count, 2)


def gradient_field(img: np.ndarray) -> GradField:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError("gradient_field needs a 2-D image of at least 3x3")
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    # mod can return exactly 2pi for tiny negative angles
    ori[ori >= 2 * np.pi] = 0.0
    return GradField(mag, ori)


def make_grid(side: int, n: int, patch: int = PATCH) -> DenseGrid:
    """``n`` x ``n`` patch centres, first and last patches flush with the edges."""
    if n < 1:
        raise ValueError("grid needs at least one patch per side")
    if side < patch:
        raise ValueError(f"image side {side} smaller than patch {patch}")
    half = patch / 2.0
    if n == 1:
        ticks = np.array([side / 2.0])
    else:
        stride = (side - patch) / (n - 1)
        if stride < 1:
            raise ValueError(f"{n} patches per side do not fit in {side} pixels")
        ticks = half + stride * np.arange(n)
    rr, cc = np.meshgrid(ticks, ticks, indexing="ij")
    centers = np.stack([rr.ravel(), cc.ravel()], axis=1)
    origins = np.floor(centers - half + 0.5).astype(np.int64)
    origins = np.clip(origins, 0, side - patch)
    return DenseGrid(n, centers, origins, patch)


def _spatial_weights() -> np.ndarray:
    """(16 cells, 256 pixels) bilinear cell weights times the Gaussian window."""
    t = np.arange(PATCH, dtype=np.float64)
    centre = CELLS * np.arange(CELLS) + (CELLS - 1) / 2.0
    w1 = np.maximum(0.0, 1.0 - np.abs(t[None, :] - centre[:, None]) / CELLS)  # (4, 16)
    g1 = np.exp(-((t - (PATCH - 1) / 2.0) ** 2) / (2 * SIGMA ** 2))
    wy = w1 * g1  # gaussian is separable
    return np.einsum("ay,bx->abyx", wy, wy).reshape(CELLS * CELLS, PATCH * PATCH)


_WSP = _spatial_weights()


def _orientation_split(field: GradField):
    b = field.orientation * (BINS / (2 * np.pi))
    fl = np.floor(b)
    b0 = fl.astype(np.int64) % BINS
    frac = b - fl
    return b0, frac


def _normalize_rows(raw: np.ndarray) -> np.ndarray:
    out = np.zeros_like(raw)
    norm = np.linalg.norm(raw, axis=1)
    live = norm > FLAT_EPS
    d = raw[live] / norm[live, None]
    np.minimum(d, CLAMP, out=d)
    d /= np.linalg.norm(d, axis=1)[:, None]
    out[live] = d
    return out


def _sift_grid_numpy(mag, b0, frac, origins):
    h, w = mag.shape
    omap = np.zeros((h, w, BINS))
    rows, cols = np.indices((h, w))
    omap[rows, cols, b0] += mag * (1.0 - frac)
    omap[rows, cols, (b0 + 1) % BINS] += mag * frac
    off = np.arange(PATCH)
    r = origins[:, 0, None, None] + off[None, :, None]
    c = origins[:, 1, None, None] + off[None, None, :]
    patches = omap[r, c].reshape(len(origins), PATCH * PATCH, BINS)
    raw = np.einsum("cp,npo->nco", _WSP, patches).reshape(len(origins), DIM)
    return _normalize_rows(raw)


@njit
def _sift_grid_numba(mag, b0, frac, origins):
    wsp = np.zeros((CELLS, PATCH))
    gauss = np.zeros(PATCH)
    for t in range(PATCH):
        gauss[t] = np.exp(-((t - (PATCH - 1) / 2.0) ** 2) / (2 * SIGMA ** 2))
        for a in range(CELLS):
            v = 1.0 - abs(t - (CELLS * a + (CELLS - 1) / 2.0)) / CELLS
            wsp[a, t] = v * gauss[t] if v > 0.0 else 0.0
    npatch = origins.shape[0]
    out = np.zeros((npatch, DIM))
    raw = np.zeros(DIM)
    for p in range(npatch):
        raw[:] = 0.0
        r0 = origins[p, 0]
        c0 = origins[p, 1]
        for y in range(PATCH):
            for x in range(PATCH):
                m = mag[r0 + y, c0 + x]
                if m == 0.0:
                    continue
                lo = b0[r0 + y, c0 + x]
                hi = (lo + 1) % BINS
                f = frac[r0 + y, c0 + x]
                for a in range(CELLS):
                    wa = wsp[a, y]
                    if wa == 0.0:
                        continue
                    for b in range(CELLS):
                        wb = wsp[b, x]
                        if wb == 0.0:
                            continue
                        base = (a * CELLS + b) * BINS
                        s = m * wa * wb
                        raw[base + lo] += s * (1.0 - f)
                        raw[base + hi] += s * f
        norm = 0.0
        for i in range(DIM):
            norm += raw[i] * raw[i]
        norm = np.sqrt(norm)
        if norm <= FLAT_EPS:
            continue
        norm2 = 0.0
        for i in range(DIM):
            v = raw[i] / norm
            if v > CLAMP:
                v = CLAMP
            out[p, i] = v
            norm2 += v * v
        norm2 = np.sqrt(norm2)
        for i in range(DIM):
            out[p, i] /= norm2
    return out


_sift_grid = pick(_sift_grid_numba, _sift_grid_numpy)


def _check_origins(field: GradField, origins: np.ndarray) -> None:
    h, w = field.magnitude.shape
    if origins.size and (origins.min() < 0 or origins[:, 0].max() + PATCH > h
                         or origins[:, 1].max() + PATCH > w):
        raise ValueError("patch extends outside the image")


def sift_descriptors(field: GradField, origins: np.ndarray) -> np.ndarray:
    """Descriptors for the 16x16 patches with the given top-left corners."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.int64)
    _check_origins(field, origins)
    b0, frac = _orientation_split(field)
    return _sift_grid(np.ascontiguousarray(field.magnitude), b0, frac, origins)


def sift_descriptor(field: GradField, center) -> np.ndarray:
    """One descriptor for the patch centred on ``center`` (row, col)."""
    origin = np.floor(np.asarray(center, dtype=np.float64) - PATCH / 2.0 + 0.5).astype(np.int64)
    return sift_descriptors(field, origin[None, :])[0]


def describe_image(img: np.ndarray, n: int) -> Descriptors:
    """``n * n`` descriptors of a square image in row-major grid order."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError("describe_image expects a square normalized crop")
    grid = make_grid(img.shape[0], n)
    values = sift_descriptors(gradient_field(img), grid.origins)
    return Descriptors(values, grid.centers)


# ------------------------------------------------------------------- dumps

def write_descriptors(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4").reshape(-1, DIM)
    with open(path, "wb") as fh:
        fh.write(b"DSFT" + struct.pack("<I", len(values)) + values.tobytes())


def read_descriptors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != b"DSFT":
        raise FormatError("not a DSFT descriptor dump")
    if len(buf) < 8:
        raise OSError("truncated DSFT header")
    (count,) = struct.unpack_from("<I", buf, 4)
    need = 8 + count * DIM * 4
    if len(buf) < need:
        raise OSError("truncated DSFT payload")
    return np.frombuffer(buf, dtype="<f4", count=count * DIM, offset=8).reshape(count, DIM).astype(np.float64)
