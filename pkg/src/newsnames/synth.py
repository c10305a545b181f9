"""Synthetic broadcast corpus: rendered frames plus scripted-adapter fixtures.

A :class:`SceneSpec` lists timed graphics over a background. Rendering
produces one PNG per sampling tick, detection and OCR sidecar files that
carry each graphic's exact box and text, and ground truth for every graphic
flagged as naming a person.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from PIL import Image

from .detect import Category
from .errors import ConfigError

# 5x7 glyphs, one 5-bit row per entry, most significant bit leftmost.
_FONT_HEX = {
    "A": "0E11111F111111", "B": "1E11111E11111E", "C": "0E11101010110E", "D": "1E11111111111E",
    "E": "1F10101E10101F", "F": "1F10101E101010", "G": "0E11101711110F", "H": "1111111F111111",
    "I": "0E04040404040E", "J": "0702020202120C", "K": "11121418141211", "L": "1010101010101F",
    "M": "111B1515111111", "N": "11111915131111", "O": "0E11111111110E", "P": "1E11111E101010",
    "Q": "0E11111115120D", "R": "1E11111E141211", "S": "0F10100E01011E", "T": "1F040404040404",
    "U": "1111111111110E", "V": "11111111110A04", "W": "1111111515150A", "X": "11110A040A1111",
    "Y": "1111110A040404", "Z": "1F01020408101F", "0": "0E11131519110E", "1": "040C040404040E",
    "2": "0E11010204081F", "3": "1F02040201110E", "4": "02060A121F0202", "5": "1F101E0101110E",
    "6": "0608101E11110E", "7": "1F010204080808", "8": "0E11110E11110E", "9": "0E11110F01020C",
    ".": "00000000000C0C", ",": "000000000C0408", "-": "0000001F000000", "'": "04040800000000",
    "’": "04040800000000", ":": "000C0C000C0C00", "|": "04040404040404", "!": "04040404040004",
    "$": "040F140E051E04", "&": "0C12140815120D", "/": "01010204081010", " ": "00000000000000",
}
FONT: dict[str, np.ndarray] = {
    ch: np.array([[(int(h[i:i + 2], 16) >> (4 - b)) & 1 for b in range(5)]
                  for i in range(0, 14, 2)], dtype=bool)
    for ch, h in _FONT_HEX.items()
}
_UNKNOWN = np.ones((7, 5), dtype=bool)
GLYPH_W, GLYPH_H = 5, 7
# Two rows above each glyph hold a diacritic mark.
CELL_W, CELL_H = 6, 10


def glyph_for(ch: str) -> tuple[np.ndarray, bool]:
    """Bitmap of a character's base letter and whether it carries a mark."""
    up = ch.upper()
    if up in FONT:
        return FONT[up], False
    decomposed = unicodedata.normalize("NFD", up)
    base = decomposed[0]
    mark = len(decomposed) > 1 or up in "ĦŁØĐ"
    base = {"Ħ": "H", "Ł": "L", "Ø": "O", "Đ": "D"}.get(base, base)
    return FONT.get(base, _UNKNOWN), mark


def render_text(text: str, scale: int = 1) -> np.ndarray:
    """Boolean mask of ``text`` in the bitmap font, ``CELL_H * scale`` rows tall."""
    mask = np.zeros((CELL_H, max(1, CELL_W * len(text))), dtype=bool)
    for i, ch in enumerate(text):
        glyph, mark = glyph_for(ch)
        x = i * CELL_W
        mask[CELL_H - GLYPH_H - 1:CELL_H - 1, x:x + GLYPH_W] = glyph
        if mark:
            mask[0, x + 2] = True
    if scale > 1:
        mask = np.kron(mask, np.ones((scale, scale), dtype=bool))
    return mask


Color = tuple[int, int, int]


@dataclass(frozen=True)
class GraphicSpec:
    """One timed overlay. ``person`` names who the graphic identifies, if anyone.

    ``person=True`` means the displayed text is itself the person's name.
    ``ocr_text`` simulates recognition noise; it defaults to ``text``.
    """

    category: str
    bbox: tuple[int, int, int, int]
    text: str
    start_s: float
    end_s: float
    person: Union[str, bool, None] = None
    fill: Color = (20, 40, 110)
    text_color: Color = (245, 245, 245)
    ocr_text: Optional[str] = None
    ocr_confidence: float = 92.0
    det_confidence: float = 0.9

    def __post_init__(self) -> None:
        Category(self.category)
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0 or x < 0 or y < 0:
            raise ValueError(f"bad graphic bbox {self.bbox}")
        if not self.start_s < self.end_s:
            raise ValueError(f"graphic {self.text!r}: start_s must precede end_s")
        if not 0 <= self.ocr_confidence <= 100 or not 0 <= self.det_confidence <= 1:
            raise ValueError(f"graphic {self.text!r}: confidence out of range")

    @property
    def person_name(self) -> Optional[str]:
        if self.person is True:
            return self.text
        return self.person or None

    def visible_at(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


@dataclass(frozen=True)
class SceneSpec:
    """Background styles: ``flat`` (one colour), ``cuts`` (a new block texture
    every ``shot_s`` seconds, like camera cuts) and ``noise`` (a new texture
    every frame, like continuous motion)."""

    duration_s: float
    graphics: tuple[GraphicSpec, ...] = ()
    width: int = 640
    height: int = 360
    sample_rate: float = 1.0
    background: str = "flat"
    background_color: Color = (90, 90, 90)
    shot_s: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration_s < 0 or self.sample_rate <= 0 or self.shot_s <= 0:
            raise ValueError("duration_s, sample_rate and shot_s must be non-negative/positive")
        if self.background not in ("flat", "cuts", "noise"):
            raise ValueError(f"unknown background style {self.background!r}")
        for g in self.graphics:
            x, y, w, h = g.bbox
            if x + w > self.width or y + h > self.height:
                raise ValueError(f"graphic {g.text!r} extends outside the frame")

    @property
    def n_frames(self) -> int:
        return int(math.ceil(self.duration_s * self.sample_rate - 1e-9))

    def frame_time(self, i: int) -> float:
        return i / self.sample_rate


def scene_from_dict(d: dict) -> SceneSpec:
    try:
        graphics = tuple(
            GraphicSpec(**{**g, "bbox": tuple(g["bbox"]),
                           **{k: tuple(g[k]) for k in ("fill", "text_color") if k in g}})
            for g in d.get("graphics", ())
        )
        rest = {k: v for k, v in d.items() if k != "graphics"}
        if "background_color" in rest:
            rest["background_color"] = tuple(rest["background_color"])
        return SceneSpec(graphics=graphics, **rest)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad scene spec: {exc}") from exc


def _block_texture(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    blocks = rng.integers(0, 256, size=(9, 16, 3), dtype=np.uint8)
    rows = (np.arange(height) * 9) // height
    cols = (np.arange(width) * 16) // width
    return blocks[rows][:, cols]


def render_background(spec: SceneSpec, i: int) -> np.ndarray:
    if spec.background == "flat":
        img = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
        img[:] = spec.background_color
        return img
    if spec.background == "cuts":
        shot = int(math.floor(spec.frame_time(i) / spec.shot_s + 1e-9))
        rng = np.random.default_rng([spec.seed, shot])
    else:
        rng = np.random.default_rng([spec.seed, 1_000_000 + i])
    return _block_texture(rng, spec.width, spec.height)


def draw_graphic(img: np.ndarray, g: GraphicSpec) -> None:
    x, y, w, h = g.bbox
    img[y:y + h, x:x + w] = g.fill
    pad = 4
    scale = max(1, (h - 2 * pad) // CELL_H)
    mask = render_text(g.text, scale)[:max(0, h - 2 * pad), :max(0, w - 2 * pad)]
    ty = y + (h - mask.shape[0]) // 2
    region = img[ty:ty + mask.shape[0], x + pad:x + pad + mask.shape[1]]
    region[mask] = g.text_color


def render_frame(spec: SceneSpec, i: int) -> np.ndarray:
    img = render_background(spec, i)
    t = spec.frame_time(i)
    for g in spec.graphics:
        if g.visible_at(t):
            draw_graphic(img, g)
    return img


def _boxes_overlap(a: tuple, b: tuple) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def overlapping_graphics(spec: SceneSpec) -> list[tuple[int, int]]:
    """Index pairs of graphics that share screen area while both are visible."""
    out = []
    gs = spec.graphics
    for i in range(len(gs)):
        for j in range(i + 1, len(gs)):
            a, b = gs[i], gs[j]
            if a.start_s < b.end_s and b.start_s < a.end_s and _boxes_overlap(a.bbox, b.bbox):
                out.append((i, j))
    return out


def ground_truth(spec: SceneSpec) -> list[dict]:
    """One entry per person: earliest start to latest end over their graphics."""
    spans: dict[str, list[float]] = {}
    for g in spec.graphics:
        name = g.person_name
        if name is None:
            continue
        end = min(g.end_s, spec.duration_s)
        if g.start_s >= end:
            continue
        s = spans.setdefault(name, [g.start_s, end])
        s[0], s[1] = min(s[0], g.start_s), max(s[1], end)
    return [{"name": n, "first_s": s, "last_s": e}
            for n, (s, e) in sorted(spans.items(), key=lambda kv: (kv[1][0], kv[0]))]


@dataclass
class SynthCorpus:
    root: Path
    frames_dir: Path
    n_frames: int
    ground_truth: list[dict]
    config_path: Path
    overlaps: list[tuple[int, int]] = field(default_factory=list)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def synth_corpus(spec: SceneSpec, out_dir: str | Path) -> SynthCorpus:
    """Write ``frames/``, ``detections/``, ``ocr/``, ``ground_truth.json`` and ``config.json``."""
    root = Path(out_dir)
    frames_dir, det_dir, ocr_dir = root / "frames", root / "detections", root / "ocr"
    for d in (frames_dir, det_dir, ocr_dir):
        d.mkdir(parents=True, exist_ok=True)

    for i in range(spec.n_frames):
        t = spec.frame_time(i)
        Image.fromarray(render_frame(spec, i)).save(frames_dir / f"frame_{i:06d}.png")
        visible = [g for g in spec.graphics if g.visible_at(t)]
        _write_json(det_dir / f"frame_{i:06d}.json", {
            "frame_index": i,
            "detections": [{"bbox": list(g.bbox), "category": g.category,
                            "confidence": g.det_confidence} for g in visible],
        })
        _write_json(ocr_dir / f"frame_{i:06d}.json", {
            "frame_index": i,
            "regions": [{"bbox": list(g.bbox), "rows": [{
                "text": g.text if g.ocr_text is None else g.ocr_text,
                "confidence": g.ocr_confidence,
                "bbox": [0, 0, g.bbox[2], g.bbox[3]],
            }]} for g in visible],
        })

    gt = ground_truth(spec)
    _write_json(root / "ground_truth.json", {"schema_version": 1, "entries": gt})
    overlaps = overlapping_graphics(spec)
    _write_json(root / "scene_report.json", {
        "schema_version": 1,
        "n_frames": spec.n_frames,
        "overlapping_graphics": [
            {"a": spec.graphics[i].text, "b": spec.graphics[j].text} for i, j in overlaps],
    })
    config_path = root / "config.json"
    _write_json(config_path, {
        "schema_version": 1,
        "ingest": {"frames": "frames", "sample_rate": spec.sample_rate},
        "detector": {"kind": "scripted", "path": "detections"},
        "ocr": {"kind": "scripted", "path": "ocr"},
    })
    return SynthCorpus(root, frames_dir, spec.n_frames, gt, config_path, overlaps)


def lower_third(text: str, start_s: float, end_s: float, person: Union[str, bool, None] = True,
                **kw: Any) -> GraphicSpec:
    return GraphicSpec("LowerThird", (40, 270, 420, 44), text, start_s, end_s, person, **kw)


def demo_scene(seed: int = 7) -> SceneSpec:
    """60 s newscast: four people (one with diacritics, one also shown by
    title and surname), persistent banners, a lowercase ticker, a headline
    of ordinary capitalised words and a low-confidence junk strap."""
    graphics: Sequence[GraphicSpec] = (
        GraphicSpec("BreakingNews", (0, 0, 260, 36), "BREAKING NEWS", 0, 60,
                    fill=(170, 20, 20)),
        GraphicSpec("DigitalOnScreen", (540, 8, 90, 30), "NEWS 24", 0, 60, fill=(0, 0, 0)),
        GraphicSpec("Ticker", (0, 330, 640, 30), "markets rally as rates hold", 0, 60,
                    fill=(240, 200, 0), text_color=(0, 0, 0)),
        lower_third("John Smith", 5, 10),
        GraphicSpec("Headline", (40, 200, 360, 40), "Budget Vote Today", 10, 15),
        lower_third("Ċensu Żahra", 15, 20),
        lower_third("Anna Borg", 25, 30),
        GraphicSpec("OtherNewsGraphic", (420, 60, 200, 40), "Lorem Ipsum", 30, 35,
                    ocr_confidence=35.0),
        lower_third("Minister Borg", 40, 45, person="Anna Borg"),
        lower_third("Maria Camilleri", 50, 55, ocr_text="Maria Camil|eri"),
    )
    return SceneSpec(60.0, tuple(graphics), background="cuts", shot_s=5.0, seed=seed)
