"""End-to-end run: ingest, detect, read, recognise and cluster, with an audit trail.

Per-frame and per-patch work runs on a bounded thread pool. Each work item
buffers its audit records in a :class:`Collector`; results are appended to
the log in input order, so the trail is identical for any worker count.
"""

from __future__ import annotations

import json
import logging
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, TypeVar

from .audit import ArtifactStore, AuditLog, Collector, digest_obj
from .cluster import CommandEmbedder, Embedder, NameCluster, TrigramEmbedder, cluster_names
from .config import PipelineConfig
from .detect import (BinarizedPatch, CommandDetector, DetectorAdapter, ScriptedDetector,
                     detect_regions, preprocess_region)
from .entities import CommandNer, NameCandidate, NerAdapter, load_lexicons, validate_name, recognize_entities
from .errors import AdapterError, ConfigError, NewsNamesError
from .evalharness import EvalReport, evaluate, load_ground_truth, prediction_from_json
from .ingest import Frame, dedup_keep_mask, hash_frames, load_frames
from .ocrtext import (CommandOcr, OcrAdapter, ScriptedOcr, TextSpan, extract_text,
                      load_repair_table, normalize_text)

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def make_detector(cfg: PipelineConfig, tmp_dir: Path) -> DetectorAdapter:
    d = cfg.detector
    if d.kind == "scripted":
        return ScriptedDetector(d.path)
    return CommandDetector(d.command, tmp_dir / "det")


def make_ocr(cfg: PipelineConfig, tmp_dir: Path) -> OcrAdapter:
    o = cfg.ocr
    if o.kind == "scripted":
        return ScriptedOcr(o.path)
    return CommandOcr(o.command, tmp_dir / "ocr")


def make_ner(cfg: PipelineConfig) -> Optional[NerAdapter]:
    return CommandNer(cfg.entities.ner_command) if cfg.entities.ner_command else None


def make_embedder(cfg: PipelineConfig) -> Embedder:
    if cfg.embedder.kind == "command":
        return CommandEmbedder(cfg.embedder.command)
    return TrigramEmbedder()


def _pool_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def coverage_ends(frames: Sequence[Frame], keep: Sequence[bool], sample_rate: float) -> dict[int, float]:
    """For each kept frame, the end time of the run of near-duplicates it stands for."""
    ends: dict[int, float] = {}
    current = None
    for f, k in zip(frames, keep):
        if k:
            current = f.index
        if current is not None:
            ends[current] = f.timestamp_s + 1.0 / sample_rate
    return ends


@dataclass
class RunResult:
    predictions: list[dict]
    clusters: list[NameCluster]
    out_dir: Path
    stage_times_s: dict[str, float]
    runtime_s: float
    n_frames: int = 0
    n_kept: int = 0
    report: Optional[EvalReport] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def predictions_path(self) -> Path:
        return self.out_dir / "predictions.json"

    @property
    def audit_path(self) -> Path:
        return self.out_dir / "audit.jsonl"


def write_json(path: Path, obj: object) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


class _Run:
    """State shared by the stages of one pipeline run."""

    def __init__(self, cfg: PipelineConfig, out_dir: Path, workers: int) -> None:
        self.cfg = cfg
        self.out_dir = out_dir
        self.workers = workers
        self.audit = AuditLog(out_dir / "audit.jsonl")
        self.store = ArtifactStore(out_dir)
        self.config_digest = cfg.digest()
        self.stage_times: dict[str, float] = {}

    def params(self, stage: str, section: object) -> str:
        return digest_obj({"config": self.config_digest, "stage": stage, "params": repr(section)})

    def flush(self, collectors: Iterable[Collector], params_digest: str) -> None:
        """Append buffered records in order, stamping stage params onto bare warnings."""
        for c in collectors:
            self.audit.extend(r if r.params_digest else replace(r, params_digest=params_digest)
                              for r in c.records)

    def timed(self, stage: str, t0: float, message: str, params_digest: str) -> None:
        dt = time.perf_counter() - t0
        self.stage_times[stage] = dt
        self.audit.record(stage, params_digest=params_digest, message=f"stage done: {message}",
                          wall_time_ms=dt * 1000.0)


def run_pipeline(cfg: PipelineConfig, out_dir: Optional[str | Path] = None,
                 workers: Optional[int] = None, gt_path: Optional[str | Path] = None) -> RunResult:
    """Run every stage over the configured frame directory.

    Writes ``predictions.json``, ``audit.jsonl``, ``report.txt`` and an
    ``artifacts/`` tree to ``out_dir`` (default: the config's output_dir).
    Stage-fatal errors (missing input, unusable adapter configuration) are
    logged as a final audit record and re-raised.
    """
    out = Path(out_dir or cfg.output_dir or "newsnames_out")
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out, workers or cfg.workers)
    t_start = time.perf_counter()
    stage = "ingest"
    try:
        with tempfile.TemporaryDirectory(prefix="newsnames_") as tmp:
            tmp_dir = Path(tmp)
            stage = "ingest"
            frames, keep = _ingest(run, tmp_dir)
            stage = "detect"
            patches = _detect(run, [f for f, k in zip(frames, keep) if k], tmp_dir)
            stage = "ocrtext"
            spans = _ocr(run, patches, tmp_dir)
            stage = "entities"
            ends = coverage_ends(frames, keep, cfg.ingest.sample_rate)
            candidates = _entities(run, spans, ends)
            stage = "cluster"
            clusters, predictions = _cluster(run, candidates)
    except (NewsNamesError, OSError, ValueError) as exc:
        run.audit.record(stage, params_digest=run.config_digest,
                         message=f"fatal: {type(exc).__name__}: {exc}")
        run.audit.close()
        raise

    write_json(out / "predictions.json", {"schema_version": 1, "predictions": predictions})
    runtime = time.perf_counter() - t_start
    result = RunResult(predictions, clusters, out, run.stage_times, runtime,
                       n_frames=len(frames), n_kept=sum(keep),
                       warnings=[r.message for r in run.audit.warnings()])
    if gt_path is not None:
        t0 = time.perf_counter()
        gts = load_ground_truth(gt_path)
        report = evaluate([prediction_from_json(p) for p in predictions], gts, cfg.eval, runtime)
        write_json(out / "eval.json", report.to_json())
        run.timed("eval", t0, f"P={report.precision:.2f} R={report.recall:.2f} F1={report.f1:.2f}",
                  run.params("eval", cfg.eval))
        result.report = report
    run.audit.close()
    (out / "report.txt").write_text(timeline_report(result), encoding="utf-8")
    return result


def _ingest(run: _Run, tmp_dir: Path) -> tuple[list[Frame], list[bool]]:
    cfg = run.cfg.ingest
    if not cfg.frames:
        raise ConfigError("ingest.frames is not set")
    t0 = time.perf_counter()
    pd = run.params("ingest", cfg)
    c = Collector()
    try:
        frames = load_frames(cfg.frames, cfg.sample_rate, cfg.decoder, tmp_dir / "decoded", c)
    finally:
        run.flush([c], pd)
    hashes = hash_frames(frames, run.workers)
    keep = dedup_keep_mask(hashes, cfg.dedup_threshold)
    last_kept = None
    for f, h, k in zip(frames, hashes, keep):
        if k:
            msg = f"kept t={f.timestamp_s:g}s dhash={h.hex()}"
            last_kept = f.index
        else:
            msg = f"near-duplicate of frame {last_kept}, dropped"
        run.audit.record("ingest", frame_index=f.index, input_digest=f.digest(),
                         output_digest=h.hex(), params_digest=pd, message=msg)
    run.timed("ingest", t0, f"{len(frames)} frames, {sum(keep)} kept", pd)
    return frames, keep


def _detect(run: _Run, frames: Sequence[Frame], tmp_dir: Path) -> list[tuple[BinarizedPatch, float]]:
    t0 = time.perf_counter()
    pd = run.params("detect", (run.cfg.detector, run.cfg.preprocess))
    try:
        detector = make_detector(run.cfg, tmp_dir)
    except (AdapterError, OSError, json.JSONDecodeError) as exc:
        raise AdapterError(f"detector unavailable: {exc}") from exc

    def work(frame: Frame) -> tuple[Collector, list[tuple[BinarizedPatch, float]]]:
        c = Collector()
        t = time.perf_counter()
        regions = detect_regions(frame, detector, run.cfg.detector.min_det_conf, c)
        out = []
        for region in regions:
            patch = preprocess_region(frame, region, run.cfg.preprocess, c)
            if patch is None:
                continue
            run.store.put_bytes(patch.digest(), patch.to_png(), ".png")
            c.record("detect", frame_index=frame.index, input_digest=frame.digest(),
                     output_digest=patch.digest(), params_digest=pd,
                     message=f"{region.category.value} {list(region.bbox)} conf={region.confidence:g}",
                     wall_time_ms=(time.perf_counter() - t) * 1000.0)
            out.append((patch, frame.timestamp_s))
        if not regions:
            c.record("detect", frame_index=frame.index, input_digest=frame.digest(),
                     params_digest=pd, message="no graphics detected")
        return c, out

    results = _pool_map(work, frames, run.workers)
    run.flush((c for c, _ in results), pd)
    patches = [p for _, ps in results for p in ps]
    run.timed("detect", t0, f"{len(frames)} frames, {len(patches)} regions", pd)
    return patches


def _ocr(run: _Run, patches: Sequence[tuple[BinarizedPatch, float]], tmp_dir: Path) -> list[TextSpan]:
    t0 = time.perf_counter()
    cfg = run.cfg.ocr
    try:
        engine = make_ocr(run.cfg, tmp_dir)
        table = load_repair_table(cfg.repair_table)
    except (AdapterError, OSError, json.JSONDecodeError) as exc:
        raise AdapterError(f"OCR unavailable: {exc}") from exc
    pd = run.params("ocrtext", (cfg.kind, cfg.path, cfg.command, cfg.min_conf, table.digest))

    def work(item: tuple[BinarizedPatch, float]) -> tuple[Collector, list[TextSpan]]:
        patch, ts = item
        c = Collector()
        fi = patch.source_region.frame_index
        kept = []
        spans = extract_text(patch, engine, ts, c)
        for span in spans:
            if span.confidence < cfg.min_conf:
                c.record("ocrtext", frame_index=fi, input_digest=patch.digest(), params_digest=pd,
                         message=f"dropped {span.text!r}: confidence {span.confidence:g} < {cfg.min_conf:g}")
                continue
            text = normalize_text(span.text, table)
            if not text:
                c.record("ocrtext", frame_index=fi, input_digest=patch.digest(), params_digest=pd,
                         message=f"dropped {span.text!r}: empty after normalisation")
                continue
            clean = TextSpan(text, span.confidence, span.bbox, span.region, span.frame_timestamp_s)
            digest = run.store.put_json(clean.to_json())
            c.record("ocrtext", frame_index=fi, input_digest=patch.digest(), output_digest=digest,
                     params_digest=pd, message=f"{span.text!r} -> {text!r} conf={span.confidence:g}")
            kept.append(clean)
        if not spans:
            c.record("ocrtext", frame_index=fi, input_digest=patch.digest(), params_digest=pd,
                     message="no text recognised")
        return c, kept

    results = _pool_map(work, patches, run.workers)
    run.flush((c for c, _ in results), pd)
    spans = [s for _, ss in results for s in ss]
    run.timed("ocrtext", t0, f"{len(patches)} patches, {len(spans)} spans kept", pd)
    return spans


def _entities(run: _Run, spans: Sequence[TextSpan], ends: dict[int, float]) -> list[NameCandidate]:
    t0 = time.perf_counter()
    cfg = run.cfg.entities
    try:
        lex = load_lexicons(cfg.lexicon_dir)
    except OSError as exc:
        raise ConfigError(f"lexicons unavailable: {exc}") from exc
    ner = make_ner(run.cfg)
    pd = run.params("entities", (cfg, sorted(lex.digests.items())))
    accepted = []
    for span in spans:
        c = Collector()
        cands = recognize_entities(span, lex, ner, c, pd, ends.get(span.frame_index))
        for cand in cands:
            verdict = validate_name(cand, lex, cfg.allow_single_surname)
            digest = run.store.put_json(cand.to_json())
            c.record("entities", frame_index=span.frame_index, input_digest=span.digest(),
                     output_digest=digest if verdict.accepted else "", params_digest=pd,
                     message=f"{cand.surface!r}: {verdict.reason.value}")
            if verdict.accepted:
                accepted.append(cand)
        if not cands:
            c.record("entities", frame_index=span.frame_index, input_digest=span.digest(),
                     params_digest=pd, message=f"no name in {span.text!r}")
        run.flush([c], pd)
    run.timed("entities", t0, f"{len(spans)} spans, {len(accepted)} names accepted", pd)
    return accepted


def _cluster(run: _Run, candidates: Sequence[NameCandidate]) -> tuple[list[NameCluster], list[dict]]:
    t0 = time.perf_counter()
    cfg = run.cfg
    pd = run.params("cluster", (cfg.similarity, cfg.embedder, cfg.timeline, cfg.ingest.sample_rate))
    c = Collector()
    clusters = cluster_names(candidates, cfg.similarity, make_embedder(cfg),
                             cfg.timeline.gap_tolerance_s, cfg.ingest.sample_rate, c)
    run.flush([c], pd)
    predictions = []
    for cl in clusters:
        members = [m.digest() for m in cl.members]
        pred = {"canonical": cl.canonical, **cl.timeline.to_json(),
                "variants": sorted({m.surface for m in cl.members}),
                "sightings": len(cl.members)}
        in_digest = run.store.put_json({"members": members})
        out_digest = run.store.put_json(pred)
        run.audit.record("cluster", input_digest=in_digest, output_digest=out_digest,
                         params_digest=pd, message=(
                             f"{cl.canonical!r}: {len(members)} sightings, "
                             f"variants {pred['variants']}"))
        predictions.append(pred)
    run.timed("cluster", t0, f"{len(candidates)} candidates, {len(clusters)} clusters", pd)
    return clusters, predictions


def _fmt_s(t: float) -> str:
    m, s = divmod(t, 60.0)
    return f"{int(m):02d}:{s:05.2f}"


def timeline_report(result: RunResult) -> str:
    lines = [f"Frames: {result.n_frames} read, {result.n_kept} kept after deduplication",
             f"Names: {len(result.predictions)}", ""]
    for p in result.predictions:
        spans = ", ".join(f"{_fmt_s(s)}-{_fmt_s(e)}" for s, e in p["intervals"])
        lines.append(f"{p['canonical']}  [{spans}]")
        if len(p["variants"]) > 1:
            lines.append(f"    variants: {', '.join(p['variants'])}")
    lines += ["", "Stage wall time (s):"]
    for stage, dt in result.stage_times_s.items():
        lines.append(f"  {stage:<10} {dt:8.3f}")
    lines.append(f"  {'total':<10} {result.runtime_s:8.3f}")
    if result.report is not None:
        lines += ["", result.report.table()]
    if result.warnings:
        lines += ["", f"Warnings ({len(result.warnings)}):"]
        lines += [f"  {w}" for w in result.warnings]
    return "\n".join(lines) + "\n"
