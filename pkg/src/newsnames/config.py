"""Pipeline configuration: a JSON document mapped onto frozen dataclasses.

Unknown keys are rejected at every level. Relative paths are resolved
against the directory holding the config file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .audit import digest_obj
from .baseline import BaselineParams
from .cluster import SimilarityConfig
from .detect import PreprocessParams
from .errors import ConfigError
from .evalharness import EvalParams
from .ingest import DEFAULT_DEDUP_THRESHOLD

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class IngestSection:
    frames: Optional[str] = None
    decoder: Optional[str] = None
    sample_rate: float = 1.0
    dedup_threshold: int = DEFAULT_DEDUP_THRESHOLD

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 0 <= self.dedup_threshold <= 64:
            raise ValueError("dedup_threshold must be in [0, 64]")


@dataclass(frozen=True)
class DetectorSection:
    kind: str = "scripted"
    path: Optional[str] = None
    command: Optional[str] = None
    min_det_conf: float = 0.25

    def __post_init__(self) -> None:
        _check_adapter(self.kind, self.path, self.command, ("scripted", "command"))
        if not 0.0 <= self.min_det_conf <= 1.0:
            raise ValueError("min_det_conf must be in [0, 1]")


@dataclass(frozen=True)
class OcrSection:
    kind: str = "scripted"
    path: Optional[str] = None
    command: Optional[str] = None
    min_conf: float = 60.0
    repair_table: Optional[str] = None

    def __post_init__(self) -> None:
        _check_adapter(self.kind, self.path, self.command, ("scripted", "command"))
        if not 0.0 <= self.min_conf <= 100.0:
            raise ValueError("min_conf must be in [0, 100]")


@dataclass(frozen=True)
class EntitiesSection:
    ner_command: Optional[str] = None
    lexicon_dir: Optional[str] = None
    allow_single_surname: bool = False


@dataclass(frozen=True)
class EmbedderSection:
    kind: str = "trigram"
    command: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in ("trigram", "command"):
            raise ValueError(f"embedder kind must be 'trigram' or 'command', got {self.kind!r}")
        if self.kind == "command" and not self.command:
            raise ValueError("command embedder needs 'command'")


@dataclass(frozen=True)
class TimelineSection:
    gap_tolerance_s: float = 3.0

    def __post_init__(self) -> None:
        if self.gap_tolerance_s < 0:
            raise ValueError("gap_tolerance_s must be non-negative")


def _check_adapter(kind: str, path: Optional[str], command: Optional[str], kinds: tuple[str, ...]) -> None:
    if kind not in kinds:
        raise ValueError(f"adapter kind must be one of {kinds}, got {kind!r}")
    if kind == "scripted" and not path:
        raise ValueError("scripted adapter needs 'path'")
    if kind == "command" and not command:
        raise ValueError("command adapter needs 'command'")


SECTIONS: dict[str, type] = {
    "ingest": IngestSection,
    "detector": DetectorSection,
    "preprocess": PreprocessParams,
    "ocr": OcrSection,
    "entities": EntitiesSection,
    "similarity": SimilarityConfig,
    "embedder": EmbedderSection,
    "timeline": TimelineSection,
    "eval": EvalParams,
    "baseline": BaselineParams,
}
# Keys that must not influence results or audit digests.
NON_SEMANTIC = ("workers", "output_dir")
PATH_FIELDS = {
    "ingest": ("frames",),
    "detector": ("path",),
    "ocr": ("path", "repair_table"),
    "entities": ("lexicon_dir",),
    "baseline": ("prompt_template",),
}


@dataclass(frozen=True)
class PipelineConfig:
    ingest: IngestSection = field(default_factory=IngestSection)
    detector: DetectorSection = field(default_factory=lambda: DetectorSection(path="detections"))
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    ocr: OcrSection = field(default_factory=lambda: OcrSection(path="ocr"))
    entities: EntitiesSection = field(default_factory=EntitiesSection)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    timeline: TimelineSection = field(default_factory=TimelineSection)
    eval: EvalParams = field(default_factory=EvalParams)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    workers: int = 1
    output_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["similarity"]["combinator"] = self.similarity.combinator.value
        d["preprocess"]["tiles"] = list(self.preprocess.tiles)
        return d

    def digest(self) -> str:
        d = self.to_dict()
        for k in NON_SEMANTIC:
            d.pop(k)
        return digest_obj(d)

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _section(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(data)
    if cls is PreprocessParams and "tiles" in kwargs:
        kwargs["tiles"] = tuple(kwargs["tiles"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(unknown)}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    kwargs: dict[str, Any] = {}
    for name, cls in SECTIONS.items():
        if name in data:
            section = dict(data[name]) if isinstance(data[name], dict) else data[name]
            if base_dir is not None and isinstance(section, dict):
                for key in PATH_FIELDS.get(name, ()):
                    if section.get(key):
                        section[key] = str((base_dir / section[key]).resolve())
            kwargs[name] = _section(cls, section, name)
    workers = data.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    out = data.get("output_dir")
    if out is not None and base_dir is not None:
        out = str((base_dir / out).resolve())
    return PipelineConfig(workers=workers, output_dir=out, schema_version=version, **kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data, path.parent.resolve())
