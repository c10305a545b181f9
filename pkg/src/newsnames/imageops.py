"""Greyscale conversion, CLAHE and mean-window adaptive thresholding.

All three operations are integer-exact so that results are reproducible
bit for bit across machines and worker counts.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

NBINS = 256


def to_greyscale(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma, rounded half-up: ``round(0.299 R + 0.587 G + 0.114 B)``."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 buffer, got shape {rgb.shape}")
    px = rgb.astype(np.int64)
    y = (299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2] + 500) // 1000
    return y.astype(np.uint8)


def tile_edges(length: int, ntiles: int) -> list[int]:
    return [(k * length) // ntiles for k in range(ntiles + 1)]


def clip_histogram(hist: np.ndarray, n: int, clip_limit: float) -> np.ndarray:
    """Clip ``hist`` at ``clip_limit * n / 256`` and hand the excess back uniformly.

    The remainder of the integer division is spread one count per bin at a
    fixed stride starting from bin 0.
    """
    hist = hist.astype(np.int64).copy()
    if math.isinf(clip_limit):
        return hist
    limit = max(math.floor(clip_limit * n / NBINS), 1)
    excess = int(np.maximum(hist - limit, 0).sum())
    if excess == 0:
        return hist
    np.minimum(hist, limit, out=hist)
    hist += excess // NBINS
    residual = excess % NBINS
    if residual:
        step = max(NBINS // residual, 1)
        for i in range(0, NBINS, step):
            if residual == 0:
                break
            hist[i] += 1
            residual -= 1
    return hist


def equalization_lut(hist: np.ndarray, n: int) -> np.ndarray:
    """``lut[v] = floor(255 * cdf(v) / n)``."""
    cdf = np.cumsum(hist.astype(np.int64))
    return (255 * cdf) // n


def equalize_hist(grey: np.ndarray) -> np.ndarray:
    """Plain global histogram equalisation with the same LUT rule as :func:`clahe`."""
    grey = np.asarray(grey, dtype=np.uint8)
    if grey.size == 0:
        return grey.copy()
    hist = np.bincount(grey.ravel(), minlength=NBINS)
    lut = equalization_lut(hist, grey.size)
    return lut[grey].astype(np.uint8)


def _axis_weights(length: int, edges: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # Work in doubled coordinates so tile centres are integers.
    ntiles = len(edges) - 1
    centres = np.array([edges[k] + edges[k + 1] - 1 for k in range(ntiles)], dtype=np.int64)
    pos = 2 * np.arange(length, dtype=np.int64)
    k1 = np.searchsorted(centres, pos, side="right")
    k0 = np.clip(k1 - 1, 0, ntiles - 1)
    k1 = np.clip(k1, 0, ntiles - 1)
    num = np.zeros(length, dtype=np.int64)
    den = np.ones(length, dtype=np.int64)
    inner = k0 != k1
    num[inner] = pos[inner] - centres[k0[inner]]
    den[inner] = centres[k1[inner]] - centres[k0[inner]]
    return k0, k1, num, den


def clahe(
    grey: np.ndarray,
    clip_limit: float = 2.0,
    tiles: tuple[int, int] = (8, 8),
    warn: Optional[Callable[[str], None]] = None,
) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation.

    Args:
        grey: 2-D uint8 image.
        clip_limit: multiple of the mean bin height a histogram bin may reach
            (``>= 1``; ``math.inf`` disables clipping).
        tiles: ``(tiles_x, tiles_y)`` grid. Tile ``k`` along an axis of length
            ``L`` spans ``[k*L//t, (k+1)*L//t)``.
        warn: called with a message when the image is smaller than the tile
            grid and global equalisation is used instead.

    Each pixel is mapped through the LUTs of the (up to) four tiles whose
    centres surround it, weighted bilinearly and rounded half-up. Pixels
    beyond the outermost centres use the nearest tile only.
    """
    grey = np.asarray(grey, dtype=np.uint8)
    if grey.ndim != 2:
        raise ValueError("clahe expects a single-channel image")
    if clip_limit < 1.0:
        raise ValueError(f"clip_limit must be >= 1.0, got {clip_limit}")
    tx, ty = tiles
    if tx < 1 or ty < 1:
        raise ValueError(f"tile grid must be positive, got {tiles}")
    h, w = grey.shape
    if w < tx or h < ty:
        if warn is not None:
            warn(f"image {w}x{h} smaller than tile grid {tx}x{ty}; using global equalisation")
        return equalize_hist(grey)

    xe, ye = tile_edges(w, tx), tile_edges(h, ty)
    luts = np.empty((ty, tx, NBINS), dtype=np.int64)
    for j in range(ty):
        for i in range(tx):
            tile = grey[ye[j]:ye[j + 1], xe[i]:xe[i + 1]]
            n = tile.size
            hist = clip_histogram(np.bincount(tile.ravel(), minlength=NBINS), n, clip_limit)
            luts[j, i] = equalization_lut(hist, n)

    kx0, kx1, nx, dx = _axis_weights(w, xe)
    ky0, ky1, ny, dy = _axis_weights(h, ye)
    v = grey.astype(np.intp)
    ky0, ky1, ny, dy = (a[:, None] for a in (ky0, ky1, ny, dy))
    l00 = luts[ky0, kx0[None, :], v]
    l01 = luts[ky0, kx1[None, :], v]
    l10 = luts[ky1, kx0[None, :], v]
    l11 = luts[ky1, kx1[None, :], v]
    total = (
        (dx - nx) * (dy - ny) * l00
        + nx * (dy - ny) * l01
        + (dx - nx) * ny * l10
        + nx * ny * l11
    )
    denom = dx * dy
    out = (2 * total + denom) // (2 * denom)
    return out.astype(np.uint8)


def box_sums(grey: np.ndarray, window: int) -> np.ndarray:
    """Sum over a ``window x window`` neighbourhood with edge replication."""
    r = window // 2
    padded = np.pad(grey.astype(np.int64), r, mode="edge")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    integral[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = grey.shape
    return (
        integral[window:window + h, window:window + w]
        - integral[:h, window:window + w]
        - integral[window:window + h, :w]
        + integral[:h, :w]
    )


def adaptive_threshold(grey: np.ndarray, window: int = 11, offset_c: float = 2.0) -> np.ndarray:
    """Binarise: 255 where ``value > local_mean - offset_c``, else 0."""
    grey = np.asarray(grey, dtype=np.uint8)
    if grey.ndim != 2:
        raise ValueError("adaptive_threshold expects a single-channel image")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if not math.isfinite(offset_c):
        raise ValueError(f"offset_c must be finite, got {offset_c}")
    if grey.size == 0:
        return grey.copy()
    area = window * window
    # value > sum/area - c  <=>  sum - value*area < c*area; for an integer
    # left side that is "< ceil(c*area)", evaluated exactly.
    bound = math.ceil(Fraction(offset_c) * area)
    deficit = box_sums(grey, window) - grey.astype(np.int64) * area
    keep = deficit < bound
    return np.where(keep, 255, 0).astype(np.uint8)
