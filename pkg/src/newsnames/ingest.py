"""Frame sampling and perceptual-hash deduplication."""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .audit import Collector, digest_bytes
from .errors import IngestError
from .imageops import to_greyscale

log = logging.getLogger(__name__)

HASH_COLS = 9
HASH_ROWS = 8
DEFAULT_DEDUP_THRESHOLD = 10


@dataclass(frozen=True, eq=False)
class Frame:
    """One sampled frame. ``pixels`` is an HxWx3 uint8 array, made read-only."""

    index: int
    timestamp_s: float
    pixels: np.ndarray = field(repr=False)
    source_path: Optional[Path] = None

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame pixels must be HxWx3 with H, W >= 1, got {px.shape}")
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def digest(self) -> str:
        header = f"{self.width}x{self.height}:".encode()
        return digest_bytes(header + self.pixels.tobytes())


@dataclass(frozen=True)
class FrameHash:
    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits < (1 << 64):
            raise ValueError("hash must fit in 64 bits")

    def __int__(self) -> int:
        return self.bits

    def hex(self) -> str:
        return f"{self.bits:016x}"


def _overlap_matrix(src_len: int, dst_len: int) -> np.ndarray:
    # Source pixel x covers [dst_len*x, dst_len*(x+1)) and output cell j covers
    # [src_len*j, src_len*(j+1)) in a common integer unit, so every cell has
    # the same total weight src_len*dst_len and comparisons stay exact.
    x = np.arange(src_len, dtype=np.int64)[None, :]
    j = np.arange(dst_len, dtype=np.int64)[:, None]
    lo = np.maximum(dst_len * x, src_len * j)
    hi = np.minimum(dst_len * (x + 1), src_len * (j + 1))
    return np.maximum(hi - lo, 0)


def area_sums(grey: np.ndarray, cols: int = HASH_COLS, rows: int = HASH_ROWS) -> np.ndarray:
    """Area-weighted cell sums of ``grey`` on a ``cols x rows`` grid (rows x cols array)."""
    h, w = grey.shape
    wy = _overlap_matrix(h, rows)
    wx = _overlap_matrix(w, cols)
    return wy @ grey.astype(np.int64) @ wx.T


def perceptual_hash(frame: Frame | np.ndarray) -> FrameHash:
    """64-bit difference hash.

    Bit ``row*8 + col`` is set iff cell ``(col, row)`` is strictly darker than
    cell ``(col+1, row)`` of the 9x8 area-averaged greyscale image.
    """
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    cells = area_sums(to_greyscale(pixels))
    darker = cells[:, :-1] < cells[:, 1:]
    weights = np.left_shift(np.uint64(1), np.arange(64, dtype=np.uint64)).reshape(HASH_ROWS, HASH_COLS - 1)
    return FrameHash(int(np.bitwise_or.reduce(weights[darker], initial=np.uint64(0))))


def hamming(a: FrameHash | int, b: FrameHash | int) -> int:
    return (int(a) ^ int(b)).bit_count()


def dedup_keep_mask(hashes: Sequence[FrameHash | int], threshold: int = DEFAULT_DEDUP_THRESHOLD) -> list[bool]:
    """Run-length rule: keep an item iff it differs from the last *kept* one by more than ``threshold`` bits."""
    if not 0 <= threshold <= 64:
        raise ValueError(f"threshold must be in [0, 64], got {threshold}")
    keep = []
    last = None
    for h in hashes:
        k = last is None or hamming(h, last) > threshold
        keep.append(k)
        if k:
            last = h
    return keep


def deduplicate(frames: Sequence[Frame], threshold: int = DEFAULT_DEDUP_THRESHOLD,
                workers: int = 1) -> list[Frame]:
    hashes = hash_frames(frames, workers)
    return [f for f, k in zip(frames, dedup_keep_mask(hashes, threshold)) if k]


def hash_frames(frames: Sequence[Frame], workers: int = 1) -> list[FrameHash]:
    if workers <= 1 or len(frames) < 2:
        return [perceptual_hash(f) for f in frames]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(perceptual_hash, frames))


def run_decoder(command: str, source: Path, out_dir: Path, sample_rate: float) -> None:
    """Invoke ``<command> <input> <outdir> <fps>``; it must fill ``out_dir`` with ``frame_%06d.png``."""
    argv = shlex.split(command) + [str(source), str(out_dir), f"{sample_rate:g}"]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise IngestError(f"decoder command failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise IngestError(f"decoder exited with {proc.returncode}: {proc.stderr.strip()[:500]}")


def load_frames(
    source: str | Path,
    sample_rate: float = 1.0,
    decoder: Optional[str] = None,
    work_dir: Optional[Path] = None,
    audit: Optional[Collector] = None,
) -> list[Frame]:
    """Read a directory of PNG frames, one per sampling tick.

    Files are ordered by name (``frame_%06d.png`` sorts naturally) and the
    i-th file gets index ``i`` and timestamp ``i / sample_rate``. When
    ``decoder`` is given, ``source`` is handed to it first and the directory
    it produces is read instead.

    Raises:
        IngestError: the source (or decoder output) is missing or not a directory.
    """
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    source = Path(source)
    if decoder:
        if not source.exists():
            raise IngestError(f"video source not found: {source}")
        if work_dir is None:
            work_dir = Path(tempfile.mkdtemp(prefix="frames_"))
        work_dir.mkdir(parents=True, exist_ok=True)
        run_decoder(decoder, source, work_dir, sample_rate)
        source = work_dir
    if not source.is_dir():
        raise IngestError(f"frame directory not found or unreadable: {source}")

    paths = sorted(p for p in source.iterdir() if p.suffix.lower() == ".png" and p.is_file())
    if not paths and audit is not None:
        audit.warn("ingest", f"no frames found in {source}")
    frames = []
    for i, path in enumerate(paths):
        try:
            with Image.open(path) as im:
                px = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            log.warning("skipping undecodable frame %s: %s", path, exc)
            if audit is not None:
                audit.warn("ingest", f"undecodable image {path.name}: {exc}", frame_index=i)
            continue
        frames.append(Frame(i, i / sample_rate, px, path))
    return frames
