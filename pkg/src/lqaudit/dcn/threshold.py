"""F1-optimal decision threshold from validation scores."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import DegenerateLabels

DEFAULT_TAU_HIGH = 0.3


def f1_at(scores: np.ndarray, labels: np.ndarray, tau: float) -> float:
    pred = scores >= tau
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def select_threshold(val_scores: Iterable[tuple[float, bool]] | None) -> float:
    """Threshold in the observed scores that maximizes F1 of ``score >= tau``.

    Ties go to the smallest threshold.  With no validation data the
    default of 0.3 is returned.
    """
    if val_scores is None:
        return DEFAULT_TAU_HIGH
    pairs = list(val_scores)
    if not pairs:
        return DEFAULT_TAU_HIGH
    scores = np.array([s for s, _ in pairs], dtype=np.float64)
    labels = np.array([bool(b) for _, b in pairs])
    if labels.all() or not labels.any():
        raise DegenerateLabels("need at least one positive and one negative score")
    best_tau, best_f1 = None, -1.0
    for tau in np.unique(scores):
        f1 = f1_at(scores, labels, tau)
        if f1 > best_f1:
            best_tau, best_f1 = float(tau), f1
    return best_tau
