import json

import pytest
from hypothesis import given, strategies as st

from lqaudit.errors import IdMismatch, ValidationError
from lqaudit.evalkit import (
    ClassCounts, LabeledDataset, class_metrics, confusion, metrics, predictions_from_reports,
    predictions_from_scores, read_labels, write_labels, write_metrics,
)


def test_single_true_positive_among_negatives():
    m = class_metrics(ClassCounts(tp=1, fp=0, fn=0, tn=9))
    assert (m.precision, m.recall, m.specificity, m.f1) == (1.0, 1.0, 1.0, 1.0)
    assert m.undefined == []


def test_zero_denominators_flagged():
    m = class_metrics(ClassCounts(tp=0, fp=0, fn=0, tn=5))
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert set(m.undefined) == {"precision", "recall", "f1"}
    assert m.to_dict()["undefined"]


def test_macro_and_weighted_hand_case():
    # A: f1 = 1, support 1.  B: tp=1 fn=2 gives p=1, r=1/3, f1=0.5, support 3.
    r = metrics({"A": ClassCounts(1, 0, 0, 3), "B": ClassCounts(1, 0, 2, 1)})
    assert r.per_class["B"].f1 == pytest.approx(0.5)
    assert r.macro_f1 == pytest.approx(0.75)
    assert r.weighted_f1 == pytest.approx(0.625)
    assert r.to_dict()["confusion_totals"] == {"tp": 2, "fp": 0, "fn": 2, "tn": 4}


counts = st.builds(ClassCounts, st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))


@given(counts)
def test_swapping_classes_swaps_recall_and_specificity(c):
    m = class_metrics(c)
    flipped = class_metrics(ClassCounts(tp=c.tn, fp=c.fn, fn=c.fp, tn=c.tp))
    assert m.recall == pytest.approx(flipped.specificity)
    assert m.specificity == pytest.approx(flipped.recall)


@given(counts, st.integers(1, 20))
def test_rates_invariant_under_support_rescaling(c, k):
    a = class_metrics(c)
    b = class_metrics(ClassCounts(c.tp * k, c.fp * k, c.fn * k, c.tn * k))
    for key in ("precision", "recall", "specificity", "f1"):
        assert getattr(a, key) == pytest.approx(getattr(b, key))


@given(st.lists(counts, min_size=1, max_size=6))
def test_f1_bounds(cs):
    r = metrics({str(i): c for i, c in enumerate(cs)})
    assert 0 <= r.macro_f1 <= 1 and 0 <= r.weighted_f1 <= 1
    for m in r.per_class.values():
        assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12


def _truth():
    return LabeledDataset(["A", "B"], {"s1": {"A": 1, "B": 0}, "s2": {"A": 0, "B": 1}, "s3": {"A": 0, "B": 0}})


def test_confusion_counts_and_id_check():
    c = confusion({"s1": [1, 1], "s2": [0, 0], "s3": [0, 0]}, _truth())
    assert c["A"] == ClassCounts(1, 0, 0, 2)
    assert c["B"] == ClassCounts(0, 1, 1, 1)
    with pytest.raises(IdMismatch):
        confusion({"s1": [1, 1], "s2": [0, 0]}, _truth())
    with pytest.raises(ValidationError):
        confusion({"s1": [1], "s2": [0, 0], "s3": [0, 0]}, _truth())


def test_labels_validation_and_round_trip(tmp_path):
    with pytest.raises(ValidationError):
        LabeledDataset(["A"], {"s": {"A": 2}})
    with pytest.raises(ValidationError):
        LabeledDataset(["A", "B"], {"s": {"A": 1}})
    write_labels(_truth(), tmp_path / "l.jsonl")
    assert read_labels(tmp_path / "l.jsonl", ["A", "B"]).items == _truth().items
    (tmp_path / "d.jsonl").write_text('{"slice_id": "s", "labels": {"A": 1}}\n' * 2)
    with pytest.raises(ValidationError, match="duplicate"):
        read_labels(tmp_path / "d.jsonl", ["A"])


def test_predictions_from_scores_threshold_inclusive():
    assert predictions_from_scores([("s", [0.3, 0.299])], 0.3) == {"s": [1, 0]}


def test_predictions_from_reports():
    reports = [{"findings": [
        {"slice_id": "s1", "flaw_code": "A", "status": "Confirmed"},
        {"slice_id": "s2", "flaw_code": "B", "status": "Suspicious"},
        {"slice_id": "s3", "flaw_code": "A", "status": "Rejected"},
    ]}]
    assert predictions_from_reports(reports, ["A", "B"], ["s1", "s2", "s3"]) == \
        {"s1": [1, 0], "s2": [0, 1], "s3": [0, 0]}
    strict = predictions_from_reports(reports, ["A", "B"], ["s1", "s2", "s3"], suspicious_positive=False)
    assert strict["s2"] == [0, 0]
    m = metrics(confusion(predictions_from_reports(reports, ["A", "B"], ["s1", "s2", "s3"]), _truth()))
    assert m.macro_f1 == 1.0


def test_write_metrics(tmp_path):
    r = metrics({"A": ClassCounts(1, 0, 0, 1)})
    write_metrics(r, tmp_path / "m.json", {"threshold": 0.3})
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["macro_f1"] == 1.0 and doc["threshold"] == 0.3
