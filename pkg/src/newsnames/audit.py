"""Append-only JSONL audit trail and content digests.

Every stage transition of every item produces one :class:`AuditRecord`.
Records reference inputs and outputs by digest; bulky intermediate payloads
(patches, spans, cluster memberships) live under ``artifacts/`` keyed by the
same digests, so a prediction can be walked back to the frame it came from.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

STAGES = ("ingest", "detect", "ocrtext", "entities", "cluster", "eval", "baseline")
SCHEMA_VERSION = 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_obj(obj: Any) -> str:
    return digest_bytes(canonical_json(obj).encode("utf-8"))


@dataclass(frozen=True)
class AuditRecord:
    stage: str
    input_digest: str
    output_digest: str
    params_digest: str
    message: str
    frame_index: Optional[int] = None
    wall_time_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown audit stage {self.stage!r}")

    def payload(self) -> dict:
        """The record without its timing field; what determinism checks compare."""
        d = asdict(self)
        d.pop("wall_time_ms")
        return d

    def digest(self) -> str:
        return digest_obj(self.payload())


class Collector:
    """Buffers records, e.g. inside a worker, so they can be appended in a fixed order."""

    def __init__(self) -> None:
        self.records: list[AuditRecord] = []

    def append(self, record: AuditRecord) -> AuditRecord:
        self.records.append(record)
        return record

    def extend(self, records: Iterable[AuditRecord]) -> None:
        for r in records:
            self.append(r)

    def record(self, stage: str, *, input_digest: str = "", output_digest: str = "",
               params_digest: str = "", message: str = "", frame_index: Optional[int] = None,
               wall_time_ms: float = 0.0) -> AuditRecord:
        return self.append(AuditRecord(stage, input_digest, output_digest, params_digest,
                                       message, frame_index, wall_time_ms))

    def warn(self, stage: str, message: str, frame_index: Optional[int] = None,
             params_digest: str = "") -> AuditRecord:
        return self.record(stage, message=f"warning: {message}", frame_index=frame_index,
                           params_digest=params_digest)

    def warnings(self) -> list[AuditRecord]:
        return [r for r in self.records if r.message.startswith("warning:")]

    def __iter__(self) -> Iterator[AuditRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


class AuditLog(Collector):
    """Serialised appender that mirrors every record to a JSONL file when given a path."""

    def __init__(self, path: Optional[Path] = None) -> None:
        super().__init__()
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")

    def append(self, record: AuditRecord) -> AuditRecord:
        with self._lock:
            self.records.append(record)
            if self._fh is not None:
                line = dict(record.payload(), seq=len(self.records) - 1,
                            wall_time_ms=record.wall_time_ms)
                self._fh.write(json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n")
                self._fh.flush()
        return record

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def read_audit(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class ArtifactStore:
    """Content-addressed files under ``<root>/artifacts``."""

    def __init__(self, root: Path, create: bool = True) -> None:
        self.root = Path(root) / "artifacts"
        if create:
            self.root.mkdir(parents=True, exist_ok=True)

    def put_json(self, obj: Any) -> str:
        data = canonical_json(obj).encode("utf-8")
        d = digest_bytes(data)
        self._write(f"{d}.json", data)
        return d

    def put_bytes(self, digest: str, data: bytes, suffix: str) -> Path:
        return self._write(f"{digest}{suffix}", data)

    def get_json(self, digest: str) -> Any:
        with open(self.root / f"{digest}.json", encoding="utf-8") as fh:
            return json.load(fh)

    def _write(self, name: str, data: bytes) -> Path:
        path = self.root / name
        if not path.exists():
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return path


def trace_lineage(audit: list[dict], artifacts_root: Path, canonical: str) -> list[dict]:
    """Walk the digest chain from a predicted canonical name back to frames.

    Returns one entry per cluster member with the candidate, span, patch and
    frame index it was derived from. Raises ``KeyError`` when a link is missing.
    """
    store = ArtifactStore(artifacts_root, create=False)
    by_output: dict[tuple[str, str], dict] = {}
    for rec in audit:
        if rec.get("output_digest"):
            by_output[(rec["stage"], rec["output_digest"])] = rec

    cluster_recs = [r for r in audit if r["stage"] == "cluster" and r["output_digest"]
                    and store.get_json(r["output_digest"]).get("canonical") == canonical]
    if not cluster_recs:
        raise KeyError(f"no cluster record for {canonical!r}")
    members = store.get_json(cluster_recs[0]["input_digest"])["members"]
    chain = []
    for cand_digest in members:
        ent = by_output[("entities", cand_digest)]
        ocr = by_output[("ocrtext", ent["input_digest"])]
        det = by_output[("detect", ocr["input_digest"])]
        if det["frame_index"] is None:
            raise KeyError(f"detect record for patch {det['output_digest']} has no frame index")
        chain.append({
            "candidate": cand_digest,
            "span": ent["input_digest"],
            "patch": ocr["input_digest"],
            "frame_index": det["frame_index"],
        })
    return chain
