"""Scoring predicted name timelines against ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .cluster import fuzzy_similarity
from .entities import fold_key
from .errors import UserError


@dataclass(frozen=True)
class GroundTruthEntry:
    name: str
    first_s: float
    last_s: float

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("ground-truth name is empty")
        if self.first_s > self.last_s:
            raise ValueError(f"{self.name}: first_s {self.first_s} after last_s {self.last_s}")


@dataclass(frozen=True)
class Prediction:
    """A predicted person. ``first_s``/``last_s`` are ``None`` when the producer gave no times."""

    name: str
    first_s: Optional[float] = None
    last_s: Optional[float] = None
    intervals: tuple[tuple[float, float], ...] = ()

    @property
    def timed(self) -> bool:
        return self.first_s is not None and self.last_s is not None


@dataclass(frozen=True)
class EvalParams:
    fuzzy_min: float = 0.85
    slack_s: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fuzzy_min <= 1.0:
            raise ValueError("fuzzy_min must be in [0, 1]")
        if self.slack_s < 0:
            raise ValueError("slack_s must be non-negative")


def name_similarity(pred: str, gt: str) -> float:
    return fuzzy_similarity(fold_key(pred), fold_key(gt))


def name_match(pred: str, gt: str, fuzzy_min: float = 0.85) -> bool:
    return name_similarity(pred, gt) >= fuzzy_min


def temporal_overlap(pred: Prediction, gt: GroundTruthEntry, slack_s: float = 2.0) -> bool:
    """Closed-interval intersection after widening the prediction by ``slack_s`` each side.

    Untimed predictions overlap everything.
    """
    if not pred.timed:
        return True
    return pred.first_s - slack_s <= gt.last_s and gt.first_s <= pred.last_s + slack_s


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int, float], ...]
    n_predictions: int
    n_ground_truth: int

    @property
    def true_positives(self) -> int:
        return len(self.pairs)

    @property
    def false_positives(self) -> int:
        return self.n_predictions - len(self.pairs)

    @property
    def false_negatives(self) -> int:
        return self.n_ground_truth - len(self.pairs)


def candidate_pairs(preds: Sequence[Prediction], gts: Sequence[GroundTruthEntry],
                    params: EvalParams = EvalParams()) -> list[tuple[int, int, float]]:
    out = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(gts):
            sim = name_similarity(p.name, g.name)
            if sim >= params.fuzzy_min and temporal_overlap(p, g, params.slack_s):
                out.append((pi, gi, sim))
    return out


def match_predictions(preds: Sequence[Prediction], gts: Sequence[GroundTruthEntry],
                      params: EvalParams = EvalParams()) -> Matching:
    """Greedy one-to-one assignment by descending name similarity.

    Ties are broken by ground-truth order, then prediction order. Unmerged
    duplicate predictions of one person therefore count as false positives.
    """
    cands = sorted(candidate_pairs(preds, gts, params), key=lambda t: (-t[2], t[1], t[0]))
    used_p, used_g, pairs = set(), set(), []
    for pi, gi, sim in cands:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        pairs.append((pi, gi, sim))
    return Matching(tuple(pairs), len(preds), len(gts))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int
    runtime_s: Optional[float]
    matched_pairs: tuple[tuple[str, str, float], ...] = field(default=())

    def rounded(self) -> dict[str, float]:
        return {"precision": round(self.precision, 2), "recall": round(self.recall, 2),
                "f1": round(self.f1, 2)}

    def to_json(self) -> dict:
        d = asdict(self)
        d["matched_pairs"] = [{"prediction": p, "ground_truth": g, "similarity": s}
                              for p, g, s in self.matched_pairs]
        d["display"] = self.rounded()
        d["schema_version"] = 1
        return d

    def table(self) -> str:
        rows = [
            ("Precision (%)", f"{self.precision:.2f}"),
            ("Recall (%)", f"{self.recall:.2f}"),
            ("F1 (%)", f"{self.f1:.2f}"),
            ("True positives", str(self.true_positives)),
            ("False positives", str(self.false_positives)),
            ("False negatives", str(self.false_negatives)),
            ("Runtime (s)", "n/a" if self.runtime_s is None else f"{self.runtime_s:.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v:>10}" for k, v in rows]
        if self.matched_pairs:
            lines.append("")
            lines.append("Matched:")
            lines += [f"  {p!r} -> {g!r} ({s:.3f})" for p, g, s in self.matched_pairs]
        return "\n".join(lines)


def compute_metrics(matching: Matching, runtime_s: Optional[float] = None,
                    preds: Sequence[Prediction] = (), gts: Sequence[GroundTruthEntry] = ()) -> EvalReport:
    """Precision, recall and F1 as percentages (unrounded; see :meth:`EvalReport.rounded`)."""
    tp, fp, fn = matching.true_positives, matching.false_positives, matching.false_negatives
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    named = tuple(
        (preds[pi].name if preds else str(pi), gts[gi].name if gts else str(gi), sim)
        for pi, gi, sim in matching.pairs
    )
    return EvalReport(precision, recall, f1_score(precision, recall), tp, fp, fn, runtime_s, named)


def evaluate(preds: Sequence[Prediction], gts: Sequence[GroundTruthEntry],
             params: EvalParams = EvalParams(), runtime_s: Optional[float] = None) -> EvalReport:
    return compute_metrics(match_predictions(preds, gts, params), runtime_s, preds, gts)


def _load_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise UserError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON: {exc}") from exc


def load_ground_truth(path: str | Path) -> list[GroundTruthEntry]:
    """Bare list of ``{"name", "first_s", "last_s"}`` or ``{"schema_version", "entries": [...]}``."""
    doc = _load_json(path)
    items = doc.get("entries") if isinstance(doc, dict) else doc
    if not isinstance(items, list):
        raise UserError(f"{path}: expected a list of ground-truth entries")
    try:
        return [GroundTruthEntry(str(d["name"]), float(d["first_s"]), float(d["last_s"])) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise UserError(f"{path}: bad ground-truth entry: {exc}") from exc


def prediction_from_json(d: dict) -> Prediction:
    first, last = d.get("first_s"), d.get("last_s")
    return Prediction(
        str(d["canonical"]),
        None if first is None else float(first),
        None if last is None else float(last),
        tuple((float(s), float(e)) for s, e in d.get("intervals") or ()),
    )


def load_predictions(path: str | Path) -> list[Prediction]:
    """Bare list of prediction objects or ``{"schema_version", "predictions": [...]}``."""
    doc = _load_json(path)
    items = doc.get("predictions") if isinstance(doc, dict) else doc
    if not isinstance(items, list):
        raise UserError(f"{path}: expected a list of predictions")
    try:
        return [prediction_from_json(d) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise UserError(f"{path}: bad prediction entry: {exc}") from exc
