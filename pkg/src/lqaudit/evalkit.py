"""Per-(slice, flaw) detection metrics against ground-truth labels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import IdMismatch, ValidationError


@dataclass
class LabeledDataset:
    codes: list[str]
    items: dict[str, dict[str, int]]  # slice_id -> {code: 0|1}
    corpus_fingerprint: str = ""

    def __post_init__(self):
        for sid, labels in self.items.items():
            if set(labels) != set(self.codes):
                raise ValidationError(f"{sid}: label keys {sorted(labels)} differ from codes {self.codes}")
            for c, v in labels.items():
                if v not in (0, 1):
                    raise ValidationError(f"{sid}: label {c}={v!r} is not 0/1")

    def vector(self, slice_id: str) -> list[int]:
        return [self.items[slice_id][c] for c in self.codes]


def read_labels(path, codes: Sequence[str]) -> LabeledDataset:
    """Load ``{"slice_id", "labels": {code: 0|1}}`` JSON Lines; duplicate ids are rejected."""
    items: dict[str, dict[str, int]] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            sid, labels = obj["slice_id"], obj["labels"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{n}: bad label record ({exc})") from None
        if sid in items:
            raise ValidationError(f"{path}:{n}: duplicate slice_id {sid!r}")
        items[sid] = {c: int(v) for c, v in labels.items()}
    return LabeledDataset(list(codes), items)


def write_labels(dataset: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(dataset.items):
            fh.write(json.dumps({"slice_id": sid, "labels": dataset.items[sid]}) + "\n")


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn


def confusion(pred: Mapping[str, Sequence[int]], truth: LabeledDataset) -> dict[str, ClassCounts]:
    """Per-class TP/FP/FN/TN over all (slice, flaw) pairs; id sets must match."""
    if set(pred) != set(truth.items):
        extra = sorted(set(pred) - set(truth.items))[:5]
        lacking = sorted(set(truth.items) - set(pred))[:5]
        raise IdMismatch(f"prediction/label ids differ (unlabelled: {extra}, unpredicted: {lacking})")
    K = len(truth.codes)
    out = {c: ClassCounts() for c in truth.codes}
    for sid, p in pred.items():
        if len(p) != K:
            raise ValidationError(f"{sid}: {len(p)} predictions for K={K}")
        for c, yhat, y in zip(truth.codes, p, truth.vector(sid)):
            cc = out[c]
            if yhat and y:
                cc.tp += 1
            elif yhat:
                cc.fp += 1
            elif y:
                cc.fn += 1
            else:
                cc.tn += 1
    return out


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    specificity: float
    f1: float
    support: int
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"precision": self.precision, "recall": self.recall, "specificity": self.specificity,
               "f1": self.f1, "support": self.support}
        if self.undefined:
            out["undefined"] = list(self.undefined)
        return out


def class_metrics(c: ClassCounts) -> ClassMetrics:
    flags: list[str] = []
    p = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    r = _ratio(c.tp, c.tp + c.fn, "recall", flags)
    s = _ratio(c.tn, c.tn + c.fp, "specificity", flags)
    f = 2 * p * r / (p + r) if p + r else 0.0
    if p + r == 0:
        flags.append("f1")
    return ClassMetrics(p, r, s, f, c.support, flags)


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    weighted_f1: float
    totals: ClassCounts

    def to_dict(self) -> dict:
        t = self.totals
        return {
            "per_class": {k: m.to_dict() for k, m in self.per_class.items()},
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "confusion_totals": {"tp": t.tp, "fp": t.fp, "fn": t.fn, "tn": t.tn},
        }


def metrics(counts: Mapping[str, ClassCounts]) -> MetricsReport:
    """Per-class rates plus macro (unweighted) and support-weighted F1."""
    per = {k: class_metrics(c) for k, c in counts.items()}
    macro = sum(m.f1 for m in per.values()) / len(per) if per else 0.0
    total_support = sum(m.support for m in per.values())
    weighted = sum(m.f1 * m.support for m in per.values()) / total_support if total_support else 0.0
    totals = ClassCounts(
        sum(c.tp for c in counts.values()), sum(c.fp for c in counts.values()),
        sum(c.fn for c in counts.values()), sum(c.tn for c in counts.values()),
    )
    return MetricsReport(per, macro, weighted, totals)


def predictions_from_scores(scores: Iterable[tuple[str, Sequence[float]]], threshold: float) -> dict[str, list[int]]:
    return {sid: [int(p >= threshold) for p in s] for sid, s in scores}


def predictions_from_reports(reports: Iterable[Mapping], codes: Sequence[str], slice_ids: Iterable[str],
                             suspicious_positive: bool = True) -> dict[str, list[int]]:
    """Binary predictions from audit report dicts.

    Confirmed findings count as positives; Suspicious ones do too unless
    ``suspicious_positive`` is off.  Slices absent from every report are
    all-negative.
    """
    positive = {"Confirmed"} | ({"Suspicious"} if suspicious_positive else set())
    index = {c: i for i, c in enumerate(codes)}
    out = {sid: [0] * len(codes) for sid in slice_ids}
    for rep in reports:
        for f in rep["findings"]:
            if f["status"] in positive and f["flaw_code"] in index:
                out.setdefault(f["slice_id"], [0] * len(codes))[index[f["flaw_code"]]] = 1
    return out


def write_metrics(report: MetricsReport, path, extra: Mapping | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
