"""Command-line interface.

Exit codes: 0 success, 1 user error (bad flags, missing files, invalid
config), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .audit import AuditLog, read_audit, trace_lineage
from .baseline import HttpTransport, MockTransport, run_baseline
from .config import PipelineConfig, load_config
from .errors import BaselineUnavailable, NewsNamesError, UserError
from .evalharness import EvalParams, evaluate, load_ground_truth, load_predictions, prediction_from_json
from .ingest import load_frames
from .pipeline import run_pipeline, write_json
from .synth import demo_scene, scene_from_dict, synth_corpus

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route that to our user-error code instead."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="pipeline config JSON")
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="newsnames", description="Extract person names from news-video frames.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run the extraction pipeline")
    _common(p, config_required=True)
    p.add_argument("--workers", type=int, help="override the configured worker count")
    p.add_argument("--gt", type=Path, help="ground truth to score against after the run")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--fuzzy-min", type=float)
    p.add_argument("--slack-s", type=float)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--scene", type=Path, help="scene JSON (default: built-in 60 s demo)")
    p.add_argument("--seed", type=int, default=7, help="seed for the demo scene background")

    p = sub.add_parser("baseline", help="run the generative-model baseline")
    _common(p, config_required=True)
    p.add_argument("--mock", type=Path, help="directory of scripted responses instead of HTTP")
    p.add_argument("--gt", type=Path, help="ground truth to score against")

    p = sub.add_parser("audit", help="inspect an audit trail")
    audit_sub = p.add_subparsers(dest="audit_command", required=True, parser_class=_Parser)
    show = audit_sub.add_parser("show", help="print audit records")
    _common(show)
    show.add_argument("--stage", help="only records from this stage")
    show.add_argument("--frame", type=int, help="only records for this frame index")
    show.add_argument("--trace", metavar="NAME", help="walk the lineage of a predicted name")
    return parser


def _config(path: Optional[Path]) -> PipelineConfig:
    return load_config(path) if path is not None else PipelineConfig()


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.workers is not None and args.workers < 1:
        raise UserError("--workers must be >= 1")
    result = run_pipeline(cfg, args.out, args.workers, args.gt)
    print((result.out_dir / "report.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    params = _config(args.config).eval
    try:
        params = EvalParams(args.fuzzy_min if args.fuzzy_min is not None else params.fuzzy_min,
                            args.slack_s if args.slack_s is not None else params.slack_s)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    report = evaluate(load_predictions(args.pred), load_ground_truth(args.gt), params)
    print(report.table())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "eval.json", report.to_json())
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.out is None:
        raise UserError("synth needs --out")
    if args.scene is not None:
        if not args.scene.is_file():
            raise UserError(f"scene file not found: {args.scene}")
        try:
            scene = scene_from_dict(json.loads(args.scene.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise UserError(f"{args.scene}: invalid JSON: {exc}") from exc
    else:
        scene = demo_scene(args.seed)
    corpus = synth_corpus(scene, args.out)
    print(f"wrote {corpus.n_frames} frames and {len(corpus.ground_truth)} ground-truth names to {corpus.root}")
    for i, j in corpus.overlaps:
        print(f"note: graphics {scene.graphics[i].text!r} and {scene.graphics[j].text!r} overlap")
    print(f"config: {corpus.config_path}")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir or "newsnames_baseline")
    out.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(out / "audit.jsonl")
    if args.mock is not None:
        transport, sleep = MockTransport(args.mock), (lambda s: None)
    else:
        transport, sleep = HttpTransport(), time.sleep
    t0 = time.perf_counter()
    try:
        frames = load_frames(cfg.ingest.frames, cfg.ingest.sample_rate, cfg.ingest.decoder, audit=audit)
        result = run_baseline(frames, cfg.baseline, transport, out, audit, sleep)
    finally:
        audit.close()
    runtime = time.perf_counter() - t0
    write_json(out / "baseline_predictions.json", {"schema_version": 1, "predictions": result.predictions})
    for p in result.predictions:
        print(p["canonical"])
    if args.gt is not None:
        report = evaluate([prediction_from_json(p) for p in result.predictions],
                          load_ground_truth(args.gt), cfg.eval, runtime)
        write_json(out / "baseline_eval.json", report.to_json())
        print(report.table())
    return EXIT_OK


def _audit_path(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise UserError("audit show needs --out <run directory>")
    path = args.out / "audit.jsonl" if args.out.is_dir() else args.out
    if not path.is_file():
        raise UserError(f"audit trail not found: {path}")
    return path


def cmd_audit_show(args: argparse.Namespace) -> int:
    path = _audit_path(args)
    records = read_audit(path)
    if args.trace:
        try:
            chain = trace_lineage(records, path.parent, args.trace)
        except (KeyError, OSError) as exc:
            raise UserError(f"cannot trace {args.trace!r}: {exc}") from exc
        for link in chain:
            print(f"frame {link['frame_index']}  patch {link['patch'][:12]}  "
                  f"span {link['span'][:12]}  candidate {link['candidate'][:12]}")
        return EXIT_OK
    for r in records:
        if args.stage and r["stage"] != args.stage:
            continue
        if args.frame is not None and r.get("frame_index") != args.frame:
            continue
        fi = "-" if r.get("frame_index") is None else r["frame_index"]
        print(f"{r['seq']:>6} {r['stage']:<9} {fi!s:>6}  {r['message']}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "eval": cmd_eval, "synth": cmd_synth, "baseline": cmd_baseline,
                "audit": cmd_audit_show}
    try:
        return handlers[args.command](args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except BaselineUnavailable as exc:
        print(f"error: baseline endpoint unavailable: {exc}", file=sys.stderr)
        return EXIT_USER
    except NewsNamesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
