"""News-graphic region detection (via adapters) and OCR pre-processing."""

from __future__ import annotations

import enum
import io
import json
import logging
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol

import numpy as np
from PIL import Image

from .audit import Collector, digest_bytes
from .errors import AdapterError
from .imageops import adaptive_threshold, clahe, to_greyscale
from .ingest import Frame

log = logging.getLogger(__name__)


class Category(str, enum.Enum):
    BREAKING_NEWS = "BreakingNews"
    DIGITAL_ON_SCREEN = "DigitalOnScreen"
    LOWER_THIRD = "LowerThird"
    HEADLINE = "Headline"
    TICKER = "Ticker"
    OTHER = "OtherNewsGraphic"


@dataclass(frozen=True)
class GraphicRegion:
    frame_index: int
    bbox: tuple[int, int, int, int]
    category: Category
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))

    @property
    def area(self) -> int:
        return self.bbox[2] * self.bbox[3]

    def sort_key(self) -> tuple:
        x, y, w, h = self.bbox
        return (y, x, h, w, self.category.value, -self.confidence)

    def to_json(self) -> dict:
        return {"frame_index": self.frame_index, "bbox": list(self.bbox),
                "category": self.category.value, "confidence": self.confidence}


@dataclass(frozen=True, eq=False)
class BinarizedPatch:
    pixels: np.ndarray = field(repr=False)
    source_region: GraphicRegion

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def pixel_digest(self) -> str:
        return digest_bytes(f"{self.width}x{self.height}:".encode() + self.pixels.tobytes())

    def digest(self) -> str:
        # Identical pixels on different frames are distinct patches for lineage.
        return digest_bytes(json.dumps(
            {"pixels": self.pixel_digest(), "region": self.source_region.to_json()},
            sort_keys=True).encode())

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels).save(buf, format="PNG")
        return buf.getvalue()


@dataclass(frozen=True)
class PreprocessParams:
    clip_limit: float = 2.0
    tiles: tuple[int, int] = (8, 8)
    window: int = 11
    offset_c: float = 2.0

    def __post_init__(self) -> None:
        if self.clip_limit < 1.0:
            raise ValueError("clip_limit must be >= 1.0")
        if len(self.tiles) != 2 or min(self.tiles) < 1:
            raise ValueError("tiles must be two positive integers")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        object.__setattr__(self, "tiles", tuple(int(t) for t in self.tiles))


class DetectorAdapter(Protocol):
    def detect(self, frame: Frame) -> list[dict]:
        """Return raw detections (``bbox``, ``category``, ``confidence`` dicts) for ``frame``."""
        ...


def parse_detections_doc(doc: Any) -> tuple[Optional[int], list[dict]]:
    if not isinstance(doc, dict) or not isinstance(doc.get("detections"), list):
        raise AdapterError("detections document must be an object with a 'detections' list")
    idx = doc.get("frame_index")
    if idx is not None and not isinstance(idx, int):
        raise AdapterError("frame_index must be an integer")
    return idx, doc["detections"]


class ScriptedDetector:
    """Replays detections from sidecar JSON fixtures.

    ``path`` is either a directory of ``*.json`` files or one JSON file; each
    file holds one detections document or a list of them.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.by_frame: dict[int, list[dict]] = {}
        if not self.path.exists():
            raise AdapterError(f"detection fixtures not found: {self.path}")
        files = sorted(self.path.glob("*.json")) if self.path.is_dir() else [self.path]
        for f in files:
            doc = json.loads(f.read_text(encoding="utf-8"))
            for d in doc if isinstance(doc, list) else [doc]:
                idx, dets = parse_detections_doc(d)
                if idx is None:
                    raise AdapterError(f"{f.name}: scripted fixtures need a frame_index")
                self.by_frame.setdefault(idx, []).extend(dets)

    def detect(self, frame: Frame) -> list[dict]:
        return list(self.by_frame.get(frame.index, []))


def frame_image_path(frame: Frame, tmp_dir: Path) -> Path:
    if frame.source_path is not None and Path(frame.source_path).exists():
        return Path(frame.source_path)
    path = tmp_dir / f"frame_{frame.index:06d}.png"
    if not path.exists():
        Image.fromarray(frame.pixels).save(path)
    return path


class CommandDetector:
    """Runs ``<cmd> <image_path>``; stdout must be one detections JSON document."""

    def __init__(self, command: str, tmp_dir: Optional[Path] = None, timeout_s: float = 120.0) -> None:
        self.argv = shlex.split(command)
        self.tmp_dir = Path(tmp_dir) if tmp_dir else Path(tempfile.mkdtemp(prefix="det_"))
        self.timeout_s = timeout_s

    def detect(self, frame: Frame) -> list[dict]:
        image = frame_image_path(frame, self.tmp_dir)
        try:
            proc = subprocess.run(self.argv + [str(image)], capture_output=True,
                                  text=True, timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"detector command failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(f"detector exited with {proc.returncode}: {proc.stderr.strip()[:300]}")
        try:
            doc = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"detector output is not JSON: {exc}") from exc
        idx, dets = parse_detections_doc(doc)
        if idx is not None and idx != frame.index:
            raise AdapterError(f"detector answered for frame {idx}, expected {frame.index}")
        return dets


def clamp_bbox(bbox: tuple[float, float, float, float], width: int, height: int) -> tuple[int, int, int, int]:
    x, y, w, h = (int(round(v)) for v in bbox)
    x0, y0 = max(0, min(x, width)), max(0, min(y, height))
    x1, y1 = max(x0, min(x + w, width)), max(y0, min(y + h, height))
    return (x0, y0, x1 - x0, y1 - y0)


def _parse_detection(raw: Any, frame: Frame) -> GraphicRegion:
    if not isinstance(raw, dict):
        raise ValueError("detection must be an object")
    bbox = raw.get("bbox")
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4 or \
            not all(isinstance(v, (int, float)) and math.isfinite(v) for v in bbox):
        raise ValueError(f"bad bbox {bbox!r}")
    conf = raw.get("confidence")
    if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
        raise ValueError(f"bad confidence {conf!r}")
    category = Category(raw.get("category"))
    return GraphicRegion(frame.index, clamp_bbox(bbox, frame.width, frame.height),
                         category, float(conf))


def _overlaps(a: GraphicRegion, b: GraphicRegion) -> bool:
    ax, ay, aw, ah = a.bbox
    bx, by, bw, bh = b.bbox
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def detect_regions(
    frame: Frame,
    detector: DetectorAdapter,
    min_det_conf: float = 0.25,
    audit: Optional[Collector] = None,
) -> list[GraphicRegion]:
    """Ask the adapter for regions, clamp them to the frame and drop low-confidence ones.

    Adapter failures are recorded and yield no regions for this frame.
    Overlapping regions (e.g. a ticker merged into a lower third) pass
    through unchanged but are flagged in the audit trail.
    """
    try:
        raw = detector.detect(frame)
    except AdapterError as exc:
        log.warning("detector failed on frame %d: %s", frame.index, exc)
        if audit is not None:
            audit.warn("detect", f"detector failed: {exc}", frame_index=frame.index)
        return []
    regions = []
    for i, det in enumerate(raw):
        try:
            region = _parse_detection(det, frame)
        except ValueError as exc:
            if audit is not None:
                audit.warn("detect", f"malformed detection #{i}: {exc}", frame_index=frame.index)
            continue
        if region.confidence >= min_det_conf:
            regions.append(region)
    regions.sort(key=GraphicRegion.sort_key)
    if audit is not None:
        for i in range(len(regions)):
            for j in range(i + 1, len(regions)):
                if _overlaps(regions[i], regions[j]):
                    audit.record("detect", frame_index=frame.index, message=(
                        f"overlapping regions {regions[i].category.value}{list(regions[i].bbox)} and "
                        f"{regions[j].category.value}{list(regions[j].bbox)} passed through unsplit"))
    return regions


def preprocess_region(
    frame: Frame,
    region: GraphicRegion,
    params: PreprocessParams = PreprocessParams(),
    audit: Optional[Collector] = None,
) -> Optional[BinarizedPatch]:
    """Crop, convert to grey, apply CLAHE, then binarise. ``None`` for empty regions."""
    x, y, w, h = clamp_bbox(region.bbox, frame.width, frame.height)
    if w == 0 or h == 0:
        if audit is not None:
            audit.warn("detect", f"zero-area region {list(region.bbox)} skipped", frame_index=frame.index)
        return None
    crop = frame.pixels[y:y + h, x:x + w]
    warn = None
    if audit is not None:
        def warn(msg: str) -> None:
            audit.warn("detect", msg, frame_index=frame.index)
    enhanced = clahe(to_greyscale(crop), params.clip_limit, params.tiles, warn=warn)
    binary = adaptive_threshold(enhanced, params.window, params.offset_c)
    if (x, y, w, h) != region.bbox:
        region = GraphicRegion(region.frame_index, (x, y, w, h), region.category, region.confidence)
    return BinarizedPatch(binary, region)
