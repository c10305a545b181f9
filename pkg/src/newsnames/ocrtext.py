"""Text extraction from binarised patches, confidence filtering and OCR clean-up."""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import tempfile
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Protocol

from .audit import Collector, digest_bytes, digest_obj
from .detect import BinarizedPatch, GraphicRegion
from .errors import AdapterError

log = logging.getLogger(__name__)

DEFAULT_MIN_CONF = 60.0
JOINERS = frozenset("-'’.")


@dataclass(frozen=True)
class TextSpan:
    text: str
    confidence: float
    bbox: tuple[int, int, int, int]
    region: GraphicRegion
    frame_timestamp_s: float

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("span text is empty")
        if not 0.0 <= self.confidence <= 100.0:
            raise ValueError(f"span confidence {self.confidence} outside [0, 100]")

    @property
    def frame_index(self) -> int:
        return self.region.frame_index

    def to_json(self) -> dict:
        return {"text": self.text, "confidence": self.confidence, "bbox": list(self.bbox),
                "region": self.region.to_json(), "frame_timestamp_s": self.frame_timestamp_s}

    def digest(self) -> str:
        return digest_obj(self.to_json())


class OcrAdapter(Protocol):
    def recognize(self, patch: BinarizedPatch) -> list[dict]:
        """Rows of ``{"text", "confidence", "bbox"}`` for one patch."""
        ...


def _iou(a: tuple, b: tuple) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


class ScriptedOcr:
    """Replays OCR rows from sidecar fixtures keyed by frame index and region box.

    Fixture document: ``{"frame_index": int, "regions": [{"bbox": [x,y,w,h],
    "rows": [{"text", "confidence", "bbox"}]}]}``. A patch gets the rows of the
    fixture region with the same box, or failing that the best one with IoU > 0.5.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        if not self.path.exists():
            raise AdapterError(f"OCR fixtures not found: {self.path}")
        self.by_frame: dict[int, list[dict]] = {}
        files = sorted(self.path.glob("*.json")) if self.path.is_dir() else [self.path]
        for f in files:
            doc = json.loads(f.read_text(encoding="utf-8"))
            for d in doc if isinstance(doc, list) else [doc]:
                self.by_frame.setdefault(int(d["frame_index"]), []).extend(d.get("regions", []))

    def recognize(self, patch: BinarizedPatch) -> list[dict]:
        region = patch.source_region
        entries = self.by_frame.get(region.frame_index, [])
        for e in entries:
            if tuple(e["bbox"]) == region.bbox:
                return list(e["rows"])
        scored = [(_iou(tuple(e["bbox"]), region.bbox), i) for i, e in enumerate(entries)]
        scored = [s for s in scored if s[0] > 0.5]
        if not scored:
            return []
        return list(entries[max(scored)[1]]["rows"])


def parse_tsv_rows(text: str) -> list[dict]:
    """Parse ``text<TAB>confidence<TAB>x,y,w,h`` lines. Raises ``AdapterError`` on bad format."""
    rows = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise AdapterError(f"OCR line {n}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            conf = float(parts[1])
            bbox = [int(v) for v in parts[2].split(",")]
        except ValueError as exc:
            raise AdapterError(f"OCR line {n}: {exc}") from exc
        if len(bbox) != 4:
            raise AdapterError(f"OCR line {n}: bbox needs 4 integers")
        rows.append({"text": parts[0], "confidence": conf, "bbox": bbox})
    return rows


class CommandOcr:
    """Runs ``<cmd> <image_path>`` on the patch saved as PNG; stdout is TSV rows."""

    def __init__(self, command: str, tmp_dir: Optional[Path] = None, timeout_s: float = 120.0) -> None:
        self.argv = shlex.split(command)
        self.tmp_dir = Path(tmp_dir) if tmp_dir else Path(tempfile.mkdtemp(prefix="ocr_"))
        self.tmp_dir.mkdir(parents=True, exist_ok=True)
        self.timeout_s = timeout_s

    def recognize(self, patch: BinarizedPatch) -> list[dict]:
        image = self.tmp_dir / f"{patch.digest()}.png"
        if not image.exists():
            image.write_bytes(patch.to_png())
        try:
            proc = subprocess.run(self.argv + [str(image)], capture_output=True,
                                  text=True, encoding="utf-8", timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"OCR command failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(f"OCR exited with {proc.returncode}: {proc.stderr.strip()[:300]}")
        return parse_tsv_rows(proc.stdout)


def extract_text(
    patch: BinarizedPatch,
    engine: OcrAdapter,
    frame_timestamp_s: float,
    audit: Optional[Collector] = None,
) -> list[TextSpan]:
    """Run OCR on one patch. Adapter failures skip the patch; invalid rows are dropped."""
    fi = patch.source_region.frame_index
    try:
        rows = engine.recognize(patch)
        if not isinstance(rows, list):
            raise AdapterError("OCR adapter must return a list of rows")
    except AdapterError as exc:
        log.warning("OCR failed on frame %d: %s", fi, exc)
        if audit is not None:
            audit.warn("ocrtext", f"OCR failed, patch skipped: {exc}", frame_index=fi)
        return []
    spans = []
    for i, row in enumerate(rows):
        try:
            text = row["text"]
            conf = float(row["confidence"])
            bbox = tuple(int(v) for v in row.get("bbox") or (0, 0, patch.width, patch.height))
            if not isinstance(text, str) or len(bbox) != 4 or not math.isfinite(conf):
                raise ValueError("wrong field types")
            spans.append(TextSpan(text, conf, bbox, patch.source_region, frame_timestamp_s))
        except (KeyError, TypeError, ValueError) as exc:
            if audit is not None:
                audit.warn("ocrtext", f"malformed OCR row #{i} rejected: {exc}", frame_index=fi)
    return spans


def filter_by_confidence(spans: list[TextSpan], min_conf: float = DEFAULT_MIN_CONF) -> list[TextSpan]:
    if not 0.0 <= min_conf <= 100.0:
        raise ValueError(f"min_conf must be in [0, 100], got {min_conf}")
    return [s for s in spans if s.confidence >= min_conf]


@dataclass(frozen=True)
class RepairTable:
    substitutions: dict[str, str]
    digest: str

    def __post_init__(self) -> None:
        for k, v in self.substitutions.items():
            if len(k) != 1 or len(v) != 1:
                raise ValueError(f"repair entries must map one character to one: {k!r} -> {v!r}")
            if not v.isalpha():
                raise ValueError(f"repair target must be a letter: {k!r} -> {v!r}")


def load_repair_table(path: Optional[str | Path] = None) -> RepairTable:
    if path is None:
        data = resources.files("newsnames.data").joinpath("ocr_repair.json").read_bytes()
    else:
        data = Path(path).read_bytes()
    return RepairTable(json.loads(data.decode("utf-8")), digest_bytes(data))


_DEFAULT_TABLE: Optional[RepairTable] = None


def default_repair_table() -> RepairTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_repair_table()
    return _DEFAULT_TABLE


def _is_edge(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PSZC"


def _repair_token(token: str, table: dict[str, str]) -> str:
    i, j = 0, len(token)
    while i < j and _is_edge(token[i]) and token[i] not in table:
        i += 1
    while j > i and _is_edge(token[j - 1]) and token[j - 1] not in table:
        j -= 1
    core = token[i:j]
    if not any(ch in table for ch in core) or not any(ch.isalpha() for ch in core):
        return token
    for ch in core:
        if not (ch in table or ch.isalpha() or ch in JOINERS
                or unicodedata.category(ch).startswith("M")):
            return token
    return token[:i] + "".join(table.get(ch, ch) for ch in core) + token[j:]


def _normalize_once(s: str, table: dict[str, str]) -> str:
    s = " ".join(unicodedata.normalize("NFC", s).split())
    if s:
        s = " ".join(_repair_token(t, table) for t in s.split(" "))
    i, j = 0, len(s)
    while i < j and _is_edge(s[i]):
        i += 1
    while j > i and _is_edge(s[j - 1]):
        j -= 1
    return s[i:j]


def normalize_text(raw: str, table: Optional[RepairTable] = None) -> str:
    """Canonical composition, whitespace collapse, OCR character repair, edge punctuation strip.

    Repairs (``J0HN`` -> ``JOHN``) only touch tokens made of letters, marks,
    joiners and repairable characters. Applied to a fixed point so the result
    is idempotent.
    """
    subs = (table or default_repair_table()).substitutions
    s = raw
    while True:
        out = _normalize_once(s, subs)
        if out == s:
            return out
        s = out
