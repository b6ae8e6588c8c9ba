"""2-D localization-map operations.

Heat maps are float arrays of shape (height, width); binary masks are bool
arrays of the same layout; 8-bit images are uint8 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

PROPOSAL_THRESHOLD = 0.4
LOCALIZATION_THRESHOLD = 0.8
SIGMA_MAP = 2.0  # 56x56 map scale
SIGMA_FULL = 8.0  # 448x448 image scale

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned pixel box: top-left corner (x, y), width w, height h."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


def _check_same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def normalize01(m: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def stack_max(maps) -> np.ndarray:
    """Pixelwise maximum over a non-empty sequence (or 3-D stack) of maps."""
    if isinstance(maps, np.ndarray) and maps.ndim == 3:
        stack = maps
    else:
        maps = list(maps)
        if not maps:
            raise ValueError("stack_max needs at least one map")
        _check_same_shape(*maps)
        stack = np.stack([np.asarray(m) for m in maps])
    if stack.shape[0] == 0:
        raise ValueError("stack_max needs at least one map")
    return stack.max(axis=0)


def gaussian_kernel1d(sigma: float, truncate: float = 3.0) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.floor(truncate * sigma + 1e-9))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def separable_blur(m: np.ndarray, sigma: float, mode: str = "nearest") -> np.ndarray:
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(np.asarray(m, dtype=np.float64), k, axis=0, mode=mode, cval=0.0)
    return ndimage.correlate1d(out, k, axis=1, mode=mode, cval=0.0)


def gaussian_blur(m: np.ndarray, sigma: float = SIGMA_FULL) -> np.ndarray:
    """Separable normalized Gaussian truncated at 3 sigma, edge-replicating borders."""
    return separable_blur(m, sigma, mode="nearest")


def _linear_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix for align-corners linear resampling."""
    if n_out == 1 or n_in == 1:
        pos = np.full(n_out, 0.5 * (n_in - 1))
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    w = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(w, (rows, lo), 1.0 - frac)
    np.add.at(w, (rows, hi), frac)
    return w


def resize_map(m: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize with corner pixels aligned."""
    if width < 1 or height < 1:
        raise ValueError(f"target dims must be >= 1, got {width}x{height}")
    m = np.asarray(m, dtype=np.float64)
    h, w = m.shape
    return _linear_weights(h, height) @ m @ _linear_weights(w, width).T


def dilate(mask: np.ndarray, size: int = 5) -> np.ndarray:
    """Binary dilation with a size x size square."""
    mask = np.asarray(mask, dtype=bool)
    r = size // 2
    padded = np.pad(mask, r)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dy in range(size):
        for dx in range(size):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def threshold_mask(m: np.ndarray, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return np.asarray(m) >= t


def mask_intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return np.logical_and(a, b)


def rasterize_boxes(boxes: Iterable[BBox], width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    for box in boxes:
        if not box.within(width, height):
            raise ValueError(f"{box} lies outside {width}x{height}")
        out[box.y : box.y + box.h, box.x : box.x + box.w] = True
    return out


def boxes_to_target(boxes: Sequence[BBox], width: int, height: int, sigma: float = SIGMA_FULL) -> np.ndarray:
    """GT training target: the union of boxes dilated by 5x5, then Gaussian smoothed."""
    union = rasterize_boxes(boxes, width, height)
    if not union.any():
        return np.zeros((height, width))
    return np.clip(gaussian_blur(dilate(union).astype(np.float64), sigma), 0.0, 1.0)


def fuse_pair(a: np.ndarray, b: np.ndarray, sigma: float = SIGMA_FULL) -> np.ndarray:
    """Pixelwise max of two equal-size activation maps, blurred and rescaled to [0, 1]."""
    _check_same_shape(a, b)
    return normalize01(gaussian_blur(np.maximum(a, b), sigma))


def refine_proposal(
    fused: np.ndarray,
    gt_boxes: Sequence[BBox],
    threshold: float = PROPOSAL_THRESHOLD,
    sigma: float = SIGMA_FULL,
) -> np.ndarray:
    """Second-stage pseudo label: thresholded fused map restricted to GT boxes, smoothed."""
    h, w = np.shape(fused)
    kept = mask_intersect(threshold_mask(fused, threshold), rasterize_boxes(gt_boxes, w, h))
    return gaussian_blur(kept.astype(np.float64), sigma)


def components_to_bboxes(mask: np.ndarray) -> list[BBox]:
    """Tight box per 8-connected component, largest box first."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT_CONNECTED)
    boxes = []
    for sl in ndimage.find_objects(labels):
        sy, sx = sl
        boxes.append(BBox(sx.start, sy.start, sx.stop - sx.start, sy.stop - sy.start))
    boxes.sort(key=lambda b: (-b.area, b.y, b.x))
    return boxes


# --------------------------------------------------------------------------
# 8-bit image operations
# --------------------------------------------------------------------------


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.arange(tiles + 1) * (n // tiles)


def _clipped_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.int64)
    npx = tile.size
    limit = max(1, int(clip_limit * npx / 256))
    excess = int(np.maximum(hist - limit, 0).sum())
    if excess:
        hist = np.minimum(hist, limit)
        hist += excess // 256
        rest = excess % 256
        if rest:
            step = max(256 // rest, 1)
            hist[: rest * step : step][:rest] += 1
    cdf = np.cumsum(hist)
    return np.clip(np.round(cdf * (255.0 / npx)), 0, 255)


def clahe(img: np.ndarray, clip_limit: float = 2.0, tiles: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    ``tiles`` is (rows, cols). Each tile's clipped histogram yields a lookup
    table; pixels blend the tables of the four nearest tile centres.
    """
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("clahe expects a uint8 image")
    if clip_limit < 1:
        raise ValueError("clip limit must be >= 1")
    ty, tx = tiles
    if ty < 1 or tx < 1:
        raise ValueError("tile grid must be at least 1x1")
    h, w = img.shape
    if h < ty or w < tx:
        raise ValueError(f"image {w}x{h} smaller than tile grid {tx}x{ty}")

    # Equal tiles: pad bottom/right by reflection (edge pixel not repeated)
    # up to a multiple of the grid, then crop at the end.
    src = img
    py, px = (-h) % ty, (-w) % tx
    if py or px:
        src = np.pad(img, ((0, py), (0, px)), mode="reflect" if min(h, w) > 1 else "edge")
    ey, ex = _tile_edges(h + py, ty), _tile_edges(w + px, tx)
    luts = np.empty((ty, tx, 256))
    for i in range(ty):
        for j in range(tx):
            luts[i, j] = _clipped_lut(src[ey[i] : ey[i + 1], ex[j] : ex[j + 1]], clip_limit)

    cy = 0.5 * (ey[:-1] + ey[1:] - 1)
    cx = 0.5 * (ex[:-1] + ex[1:] - 1)
    fy = np.interp(np.arange(h), cy, np.arange(ty)) if ty > 1 else np.zeros(h)
    fx = np.interp(np.arange(w), cx, np.arange(tx)) if tx > 1 else np.zeros(w)
    y0 = np.floor(fy).astype(int)
    x0 = np.floor(fx).astype(int)
    y1 = np.minimum(y0 + 1, ty - 1)
    x1 = np.minimum(x0 + 1, tx - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]

    v = img.astype(np.intp)
    Y0, Y1 = y0[:, None], y1[:, None]
    X0, X1 = x0[None, :], x1[None, :]
    top = (1 - wx) * luts[Y0, X0, v] + wx * luts[Y0, X1, v]
    bottom = (1 - wx) * luts[Y1, X0, v] + wx * luts[Y1, X1, v]
    out = (1 - wy) * top + wy * bottom
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def gamma_adjust(img: np.ndarray, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    v = np.asarray(img, dtype=np.float64) / 255.0
    return np.clip(np.round(255.0 * v**gamma), 0, 255).astype(np.uint8)


def implant_blob(
    img: np.ndarray,
    center: tuple[float, float],
    radius: float,
    intensity: float,
    seed: int | None = None,
    jitter: float = 0.0,
) -> np.ndarray:
    """Blend a disc toward ``intensity`` with a raised-cosine falloff.

    ``center`` is (x, y). With ``jitter`` > 0 the effective radius shrinks by a
    seeded random fraction up to ``jitter``, so the blob never exceeds
    ``radius``.
    """
    img = np.asarray(img)
    h, w = img.shape
    cx, cy = center
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValueError(f"blob centre {center} outside {w}x{h} image")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not 0.0 <= jitter < 1.0:
        raise ValueError("jitter must lie in [0, 1)")
    r = radius
    if jitter > 0:
        r = radius * (1.0 - jitter * np.random.default_rng(seed).random())
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.hypot(xx - cx, yy - cy)
    weight = np.where(d < r, 0.5 * (1.0 + np.cos(np.pi * np.minimum(d / r, 1.0))), 0.0)
    out = img.astype(np.float64) * (1.0 - weight) + float(intensity) * weight
    return np.clip(np.round(out), 0, 255).astype(img.dtype)
