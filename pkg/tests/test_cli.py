from __future__ import annotations

import json
import subprocess
import sys

import pytest

from newsnames.cli import main
from newsnames.synth import SceneSpec, lower_third, synth_corpus


@pytest.fixture
def corpus(tmp_path):
    scene = SceneSpec(16.0, (lower_third("John Smith", 2, 6), lower_third("Anna Borg", 9, 13)),
                      background="cuts", shot_s=2.0, seed=4)
    return synth_corpus(scene, tmp_path / "corpus")


def test_run_writes_artifacts(corpus, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", str(corpus.config_path), "--out", str(out),
                 "--gt", str(corpus.root / "ground_truth.json")])
    assert code == 0
    for name in ("predictions.json", "audit.jsonl", "report.txt", "eval.json"):
        assert (out / name).is_file()
    assert (out / "artifacts").is_dir()
    printed = capsys.readouterr().out
    assert "John Smith" in printed and "Anna Borg" in printed


def test_eval_prints_table(corpus, tmp_path, capsys):
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps([{"canonical": "John Smith", "first_s": 2, "last_s": 6}]), encoding="utf-8")
    code = main(["eval", "--pred", str(pred), "--gt", str(corpus.root / "ground_truth.json"),
                 "--out", str(tmp_path / "ev")])
    assert code == 0
    out = capsys.readouterr().out
    assert "Precision" in out and "100.00" in out and "50.00" in out
    assert json.loads((tmp_path / "ev" / "eval.json").read_text(encoding="utf-8"))["true_positives"] == 1


def test_missing_config_is_user_error(tmp_path, capsys):
    missing = tmp_path / "missing_cfg.json"
    assert main(["run", "--config", str(missing)]) == 1
    assert "missing_cfg.json" in capsys.readouterr().err


def test_unknown_flag_is_user_error(capsys):
    assert main(["run", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_fuzzy_min_is_user_error(corpus, capsys):
    gt = str(corpus.root / "ground_truth.json")
    assert main(["eval", "--pred", gt, "--gt", gt, "--fuzzy-min", "2"]) == 1


def test_synth_then_audit_trace(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"duration_s": 8, "background": "noise", "graphics": [
        {"category": "LowerThird", "bbox": [40, 270, 420, 44], "text": "Ċensu Żahra",
         "start_s": 1, "end_s": 4, "person": True}]}, ensure_ascii=False), encoding="utf-8")
    assert main(["synth", "--scene", str(scene), "--out", str(tmp_path / "c")]) == 0
    assert "wrote 8 frames and 1 ground-truth names" in capsys.readouterr().out
    assert main(["run", "--config", str(tmp_path / "c" / "config.json"), "--out", str(tmp_path / "r")]) == 0
    capsys.readouterr()
    assert main(["audit", "show", "--out", str(tmp_path / "r"), "--trace", "Ċensu Żahra"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[1] for line in lines] == ["1", "2", "3"]
    assert main(["audit", "show", "--out", str(tmp_path / "r"), "--stage", "detect", "--frame", "2"]) == 0
    assert "detect" in capsys.readouterr().out


def test_audit_trace_unknown_name(corpus, tmp_path, capsys):
    main(["run", "--config", str(corpus.config_path), "--out", str(tmp_path / "r")])
    assert main(["audit", "show", "--out", str(tmp_path / "r"), "--trace", "Nobody Here"]) == 1


def test_baseline_mock(corpus, tmp_path, capsys):
    mock = tmp_path / "mock"
    mock.mkdir()
    (mock / "000.timeout").write_text("", encoding="utf-8")
    (mock / "001.json").write_text('{"names":[{"name":"John Smith"},{"name":"Anna Borg"}]}',
                                   encoding="utf-8")
    out = tmp_path / "b"
    code = main(["baseline", "--config", str(corpus.config_path), "--mock", str(mock), "--out", str(out),
                 "--gt", str(corpus.root / "ground_truth.json")])
    assert code == 0
    printed = capsys.readouterr().out
    assert "John Smith" in printed and "Anna Borg" in printed
    preds = json.loads((out / "baseline_predictions.json").read_text(encoding="utf-8"))["predictions"]
    assert [p["canonical"] for p in preds] == ["John Smith", "Anna Borg"]
    assert (out / "baseline_raw" / "response_000.txt").is_file()


def test_baseline_unavailable_is_user_error(corpus, tmp_path, capsys):
    mock = tmp_path / "mock"
    mock.mkdir()
    for i in range(3):
        (mock / f"{i:03d}.timeout").write_text("", encoding="utf-8")
    assert main(["baseline", "--config", str(corpus.config_path), "--mock", str(mock),
                 "--out", str(tmp_path / "b")]) == 1
    assert "unavailable" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "newsnames", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "newsnames", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
