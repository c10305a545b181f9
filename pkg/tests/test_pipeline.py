from __future__ import annotations

import json

import pytest

from newsnames.audit import read_audit, trace_lineage
from newsnames.config import load_config
from newsnames.errors import NewsNamesError
from newsnames.pipeline import run_pipeline
from newsnames.synth import GraphicSpec, SceneSpec, lower_third, synth_corpus


def corpus(tmp_path, background="cuts", graphics=None, duration=20.0):
    graphics = graphics if graphics is not None else (lower_third("John Smith", 5, 10),)
    return synth_corpus(SceneSpec(duration, tuple(graphics), background=background, seed=1),
                        tmp_path / "corpus")


def overlaps(intervals, lo, hi):
    return any(s < hi and lo < e for s, e in intervals)


@pytest.mark.parametrize("background", ["cuts", "noise"])
def test_single_lower_third(tmp_path, background):
    c = corpus(tmp_path, background)
    result = run_pipeline(load_config(c.config_path), tmp_path / "out")
    assert [p["canonical"] for p in result.predictions] == ["John Smith"]
    assert overlaps(result.predictions[0]["intervals"], 5, 10)
    saved = json.loads(result.predictions_path.read_text(encoding="utf-8"))
    assert saved == {"schema_version": 1, "predictions": result.predictions}


def test_flat_background_loses_short_strap_to_dedup(tmp_path):
    # On an unchanging background the strap moves the frame hash by only a
    # few bits, below the default dedup threshold, so it is skipped.
    c = corpus(tmp_path, "flat")
    result = run_pipeline(load_config(c.config_path), tmp_path / "out")
    assert result.predictions == []
    assert result.n_kept == 1
    cfg = load_config(c.config_path)
    strict = cfg.replace(ingest=type(cfg.ingest)(cfg.ingest.frames, dedup_threshold=0))
    again = run_pipeline(strict, tmp_path / "out0")
    assert [p["canonical"] for p in again.predictions] == ["John Smith"]


def test_non_person_graphics_ignored(tmp_path):
    c = corpus(tmp_path, graphics=(GraphicSpec("Headline", (40, 200, 360, 40), "Budget Vote Today", 2, 8),
                                   GraphicSpec("Ticker", (0, 330, 640, 30), "rates hold", 0, 20)))
    assert run_pipeline(load_config(c.config_path), tmp_path / "out").predictions == []


def test_empty_frame_directory(tmp_path):
    c = corpus(tmp_path, duration=0.0, graphics=())
    result = run_pipeline(load_config(c.config_path), tmp_path / "out")
    assert result.predictions == [] and result.n_frames == 0
    records = read_audit(result.audit_path)
    done = [r["stage"] for r in records if r["message"].startswith("stage done")]
    assert done == ["ingest", "detect", "ocrtext", "entities", "cluster"]
    assert (tmp_path / "out" / "report.txt").is_file()


def test_missing_frames_directory_is_fatal_and_logged(tmp_path):
    c = corpus(tmp_path)
    for f in c.frames_dir.iterdir():
        f.unlink()
    c.frames_dir.rmdir()
    with pytest.raises(NewsNamesError):
        run_pipeline(load_config(c.config_path), tmp_path / "out")
    last = read_audit(tmp_path / "out" / "audit.jsonl")[-1]
    assert last["stage"] == "ingest" and last["message"].startswith("fatal:")


def test_every_record_has_params_digest(tmp_path):
    c = corpus(tmp_path, graphics=(lower_third("John Smith", 5, 10),
                                   lower_third("Lorem Ipsum", 12, 15, person=None, ocr_confidence=20)))
    result = run_pipeline(load_config(c.config_path), tmp_path / "out", gt_path=c.root / "ground_truth.json")
    records = read_audit(result.audit_path)
    assert records and all(r["params_digest"] for r in records)
    assert [r["seq"] for r in records] == list(range(len(records)))
    assert any(r["stage"] == "eval" for r in records)


def test_report_lists_stage_times(tmp_path):
    c = corpus(tmp_path)
    result = run_pipeline(load_config(c.config_path), tmp_path / "out")
    report = (tmp_path / "out" / "report.txt").read_text(encoding="utf-8")
    for stage in ("ingest", "detect", "ocrtext", "entities", "cluster", "total"):
        assert stage in report
    assert "John Smith" in report
    assert set(result.stage_times_s) == {"ingest", "detect", "ocrtext", "entities", "cluster"}


def test_rerun_is_deterministic(tmp_path):
    c = corpus(tmp_path, graphics=(lower_third("John Smith", 5, 10), lower_third("Anna Borg", 12, 18)))
    cfg = load_config(c.config_path)
    a = run_pipeline(cfg, tmp_path / "a", workers=1)
    b = run_pipeline(cfg, tmp_path / "b", workers=4)
    assert a.predictions_path.read_bytes() == b.predictions_path.read_bytes()

    def payloads(path):
        return [{k: v for k, v in r.items() if k != "wall_time_ms"} for r in read_audit(path)]
    assert payloads(a.audit_path) == payloads(b.audit_path)


def test_lineage_reaches_frames(tmp_path):
    c = corpus(tmp_path)
    result = run_pipeline(load_config(c.config_path), tmp_path / "out")
    chain = trace_lineage(read_audit(result.audit_path), result.out_dir, "John Smith")
    assert chain and all(5 <= link["frame_index"] < 10 for link in chain)
