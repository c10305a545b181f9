from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from newsnames.evalharness import (EvalParams, GroundTruthEntry, Matching, Prediction, candidate_pairs,
                                   compute_metrics, evaluate, f1_score, load_ground_truth,
                                   load_predictions, match_predictions, name_match, temporal_overlap)
from newsnames.errors import UserError


def test_name_match_examples():
    assert name_match("john smith", "John Smith")
    assert name_match("Donald Trunp", "Donald Trump", 0.85)
    assert not name_match("Swift", "Trump")
    assert name_match("Ċensu Żahra", "Censu Zahra")


@pytest.mark.parametrize("pred, gt, slack, expected", [
    ((0, 10), (5, 15), 0.0, True),
    ((0, 10), (12, 20), 2.0, True),
    ((0, 10), (13, 20), 2.0, False),
])
def test_temporal_overlap(pred, gt, slack, expected):
    assert temporal_overlap(Prediction("x", *pred), GroundTruthEntry("x", *gt), slack) is expected


def test_untimed_prediction_overlaps_anything():
    assert temporal_overlap(Prediction("x"), GroundTruthEntry("x", 500, 600), 0.0)


def test_matching_examples():
    m = match_predictions([Prediction("Anna Borg", 0, 5)], [GroundTruthEntry("Anna Borg", 1, 4)])
    assert (m.true_positives, m.false_positives, m.false_negatives) == (1, 0, 0)
    m = match_predictions([], [GroundTruthEntry("A B", 0, 1), GroundTruthEntry("C D", 0, 1)])
    assert (m.true_positives, m.false_negatives) == (0, 2)


def test_unmerged_duplicates_count_as_false_positives():
    preds = [Prediction("Anna Borg", 0, 5), Prediction("anna borg", 0, 5)]
    m = match_predictions(preds, [GroundTruthEntry("Anna Borg", 0, 5)])
    assert (m.true_positives, m.false_positives) == (1, 1)
    assert m.pairs[0][0] == 0  # tie on similarity goes to the earlier prediction


@pytest.mark.parametrize("p, r, f1", [(79.92, 74.44, 77.08), (93.33, 76.67, 84.18), (66.67, 50.00, 57.14)])
def test_reported_f1_values(p, r, f1):
    assert round(f1_score(p, r), 2) == pytest.approx(f1, abs=0.01)


def test_metrics_from_counts_and_zero_cases():
    rep = compute_metrics(Matching(((0, 0, 1.0), (1, 1, 1.0)), 3, 4))
    assert rep.precision == pytest.approx(200 / 3) and rep.recall == 50.0
    assert rep.f1 == pytest.approx(2 * (200 / 3) * 50 / (200 / 3 + 50))
    assert rep.rounded() == {"precision": 66.67, "recall": 50.0, "f1": 57.14}
    empty = compute_metrics(Matching((), 0, 0))
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)


@given(st.floats(0, 100), st.floats(0, 100))
def test_f1_harmonic_bounds(p, r):
    f = f1_score(p, r)
    if p == 0 or r == 0:
        assert f == 0
    else:
        assert min(p, r) - 1e-9 <= f <= max(p, r) + 1e-9


NAMES = ["Anna Borg", "Ann Borg", "Anna Borgg", "John Smith", "Jon Smith", "Maria Camilleri",
         "Mario Camilleri", "Ċensu Żahra", "Censu Zahra", "Taylor Swift"]


def instances(seed):
    rng = random.Random(seed)
    gts = [GroundTruthEntry(n, s, s + rng.randint(1, 10))
           for n, s in zip(rng.sample(NAMES, rng.randint(0, 4)), (rng.randint(0, 50) for _ in range(4)))]
    preds = []
    for _ in range(rng.randint(0, 5)):
        s = rng.randint(0, 55)
        preds.append(Prediction(rng.choice(NAMES), s, s + rng.randint(0, 8)))
    return preds, gts


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6))
def test_matching_one_to_one_and_within_factor_two_of_optimum(seed):
    preds, gts = instances(seed)
    m = match_predictions(preds, gts)
    assert len({p for p, _, _ in m.pairs}) == len({g for _, g, _ in m.pairs}) == len(m.pairs)
    assert m.true_positives + m.false_negatives == len(gts)
    assert m.true_positives + m.false_positives == len(preds)
    best = oracles.max_matching_size(len(preds), len(gts),
                                     {(p, g) for p, g, _ in candidate_pairs(preds, gts)})
    # greedy is a maximal matching: never worse than half the optimum
    assert best / 2 <= m.true_positives <= best


def test_greedy_equals_optimum_on_perturbation_instances():
    # each prediction is a (possibly misspelt) copy of one ground-truth name
    rng = random.Random(11)
    for _ in range(200):
        gts = [GroundTruthEntry(n, 10 * i, 10 * i + 5) for i, n in enumerate(rng.sample(NAMES[::2], 4))]
        preds = []
        for g in rng.sample(gts, rng.randint(1, 4)):
            name = g.name
            if rng.random() < 0.5:
                i = rng.randrange(len(name))
                name = name[:i] + "x" + name[i + 1:]
            preds.append(Prediction(name, g.first_s, g.last_s))
        preds.append(Prediction("Nobody Known", 0, 60))
        allowed = {(p, g) for p, g, _ in candidate_pairs(preds, gts)}
        assert match_predictions(preds, gts).true_positives == \
            oracles.max_matching_size(len(preds), len(gts), allowed)


def test_greedy_can_miss_the_optimum_with_distinct_similarities():
    # A is closest to gt0 but also matches gt1; B only matches gt0.
    gts = [GroundTruthEntry("Johnathan Smithson", 0, 5), GroundTruthEntry("Johnathan Smithsons", 0, 5)]
    preds = [Prediction("Johnathan Smithsen", 0, 5), Prediction("Johnathan Smythsin", 0, 5)]
    pairs = candidate_pairs(preds, gts, EvalParams(0.85))
    sims = [s for _, _, s in pairs]
    assert len(set(sims)) == len(sims)
    assert {(p, g) for p, g, _ in pairs} == {(0, 0), (0, 1), (1, 0)}
    assert match_predictions(preds, gts).true_positives == 1
    assert oracles.max_matching_size(2, 2, {(p, g) for p, g, _ in pairs}) == 2


def test_report_json_and_table():
    rep = evaluate([Prediction("Anna Borg", 0, 5)], [GroundTruthEntry("Anna Borg", 0, 5)], runtime_s=1.5)
    d = rep.to_json()
    assert d["schema_version"] == 1 and d["display"]["f1"] == 100.0
    assert d["matched_pairs"][0]["prediction"] == "Anna Borg"
    table = rep.table()
    assert "Precision (%)" in table and "100.00" in table and "1.50" in table


def test_loaders_accept_wrapped_and_bare(tmp_path):
    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps([{"name": "Anna Borg", "first_s": 0, "last_s": 5}]))
    assert load_ground_truth(gt) == [GroundTruthEntry("Anna Borg", 0.0, 5.0)]
    gt.write_text(json.dumps({"schema_version": 1, "entries": [{"name": "A B", "first_s": 1, "last_s": 2}]}))
    assert load_ground_truth(gt)[0].name == "A B"
    pr = tmp_path / "p.json"
    pr.write_text(json.dumps([{"canonical": "A B", "first_s": None, "last_s": None}]))
    assert not load_predictions(pr)[0].timed
    pr.write_text(json.dumps({"predictions": [{"canonical": "A B", "first_s": 1, "last_s": 2,
                                               "intervals": [[1, 2]]}]}))
    assert load_predictions(pr)[0].intervals == ((1.0, 2.0),)
    with pytest.raises(UserError):
        load_ground_truth(tmp_path / "missing.json")
    pr.write_text("{nope")
    with pytest.raises(UserError):
        load_predictions(pr)


def test_ground_truth_invariants():
    with pytest.raises(ValueError):
        GroundTruthEntry("", 0, 1)
    with pytest.raises(ValueError):
        GroundTruthEntry("A", 2, 1)
