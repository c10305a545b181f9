from __future__ import annotations

import json
from pathlib import Path

import pytest

from newsnames.cluster import Combinator
from newsnames.config import PipelineConfig, config_from_dict, load_config
from newsnames.errors import ConfigError


def write(tmp_path: Path, obj) -> Path:
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(obj), encoding="utf-8")
    return p


def test_defaults_round_trip():
    cfg = config_from_dict({})
    assert cfg == PipelineConfig()
    assert cfg.similarity.combinator is Combinator.MAJORITY
    assert json.loads(json.dumps(cfg.to_dict()))["preprocess"]["tiles"] == [8, 8]


@pytest.mark.parametrize("data, fragment", [
    ({"bogus": 1}, "bogus"),
    ({"ingest": {"frames": "f", "fps": 2}}, "fps"),
    ({"similarity": {"fuzzy": 0.9}}, "fuzzy"),
    ({"ocr": []}, "expected an object"),
])
def test_unknown_keys_rejected(data, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_dict(data)


@pytest.mark.parametrize("data", [
    {"ingest": {"sample_rate": 0}},
    {"ingest": {"dedup_threshold": 65}},
    {"detector": {"min_det_conf": 1.5}},
    {"ocr": {"min_conf": -1}},
    {"detector": {"kind": "scripted"}},
    {"ocr": {"kind": "command"}},
    {"embedder": {"kind": "bert"}},
    {"timeline": {"gap_tolerance_s": -1}},
    {"workers": 0},
    {"workers": "4"},
    {"schema_version": 2},
])
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    sub = tmp_path / "cfgdir"
    sub.mkdir()
    cfg = load_config(write(sub, {"ingest": {"frames": "frames"}, "detector": {"path": "../dets"},
                                  "output_dir": "out"}))
    assert Path(cfg.ingest.frames) == (sub / "frames").resolve()
    assert Path(cfg.detector.path) == (tmp_path / "dets").resolve()
    assert Path(cfg.output_dir) == (sub / "out").resolve()


def test_absolute_paths_kept(tmp_path):
    cfg = load_config(write(tmp_path, {"ingest": {"frames": str(tmp_path / "abs")}}))
    assert Path(cfg.ingest.frames) == tmp_path / "abs"


def test_digest_ignores_non_semantic_fields():
    a = config_from_dict({"workers": 1})
    b = config_from_dict({"workers": 8, "output_dir": "/elsewhere"})
    c = config_from_dict({"ocr": {"path": "ocr", "min_conf": 61}})
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_missing_file_error_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(missing)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)
