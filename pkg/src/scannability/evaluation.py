"""The four headline metrics (within/cross-user R^2, 5-way classification,
pairwise ranking), per-user difficulty bucketization, and seed-paired model
comparison."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .analytics import TTestResult, paired_t

log = logging.getLogger(__name__)

N_CLASSES = 5


def r2_cross(preds, truths) -> float:
    """Pooled coefficient of determination over all trials."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if len(preds) != len(truths) or len(preds) < 2:
        raise ValueError("need equal-length vectors of at least 2 values")
    ss_tot = ((truths - truths.mean()) ** 2).sum()
    if ss_tot == 0:
        raise ValueError("truths are constant; R^2 undefined")
    ss_res = ((truths - preds) ** 2).sum()
    return float(1.0 - ss_res / ss_tot)


def r2_within(preds, truths, user_ids) -> float:
    """Unweighted mean of per-user R^2; users without 2+ non-constant trials are skipped."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    user_ids = np.asarray(user_ids)
    scores = []
    skipped = 0
    for u in np.unique(user_ids):
        sel = user_ids == u
        t = truths[sel]
        if len(t) < 2 or np.all(t == t[0]):
            skipped += 1
            continue
        scores.append(r2_cross(preds[sel], t))
    if skipped:
        log.warning("r2_within: skipped %d users with <2 usable trials", skipped)
    if not scores:
        raise ValueError("no user had enough usable trials")
    return float(np.mean(scores))


def bucketize(times, user_ids):
    """Per-user rank-based quintile labels 0..4 (Very-Easy .. Very-Hard).

    Ties break by stable record order; per-user class counts differ by at
    most 1. Users with fewer than 5 trials are skipped (label -1) with a
    warning.
    """
    times = np.asarray(times, dtype=np.float64)
    user_ids = np.asarray(user_ids)
    labels = np.full(len(times), -1, dtype=np.int64)
    skipped = 0
    for u in np.unique(user_ids):
        idx = np.flatnonzero(user_ids == u)
        if len(idx) < N_CLASSES:
            skipped += 1
            continue
        order = np.argsort(times[idx], kind="stable")
        n = len(idx)
        for rank, pos in enumerate(order):
            labels[idx[pos]] = min(N_CLASSES - 1, (N_CLASSES * rank) // n)
    if skipped:
        log.warning("bucketize: skipped %d users with <%d trials", skipped, N_CLASSES)
    return labels


def classification_accuracy(pred_labels, true_labels) -> float:
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    if len(pred_labels) != len(true_labels):
        raise ValueError("label vectors must have equal length")
    return float((pred_labels == true_labels).mean())


def ranking_accuracy(preds, truths) -> float:
    """Pairwise concordance over all unordered pairs with distinct truths.

    Correctly ordered pairs score 1, predicted ties score 0.5.
    """
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if len(preds) < 2:
        raise ValueError("need at least 2 trials")
    i, j = np.triu_indices(len(preds), k=1)
    dt = truths[i] - truths[j]
    valid = dt != 0
    if not valid.any():
        raise ValueError("no pairs with distinct truths")
    dp = preds[i][valid] - preds[j][valid]
    dt = dt[valid]
    score = np.where(np.sign(dp) == np.sign(dt), 1.0, np.where(dp == 0, 0.5, 0.0))
    return float(score.mean())


@dataclass
class EvalReport:
    model_id: str
    split_id: str
    within_user_r2: float
    cross_user_r2: float
    classification_accuracy: float
    ranking_accuracy: float
    per_seed: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {
                "model_id": self.model_id,
                "split_id": self.split_id,
                "within_user_r2": self.within_user_r2,
                "cross_user_r2": self.cross_user_r2,
                "classification_accuracy": self.classification_accuracy,
                "ranking_accuracy": self.ranking_accuracy,
                "per_seed": self.per_seed,
            },
            indent=2,
            sort_keys=True,
        )


def evaluate_predictions(preds, truths, user_ids, model_id="model", split_id="test") -> EvalReport:
    """All four metrics from regression predictions; classification labels come
    from per-user bucketization of predictions vs truths."""
    true_labels = bucketize(truths, user_ids)
    pred_labels = bucketize(preds, user_ids)
    usable = true_labels >= 0
    return EvalReport(
        model_id=model_id,
        split_id=split_id,
        within_user_r2=r2_within(preds, truths, user_ids),
        cross_user_r2=r2_cross(preds, truths),
        classification_accuracy=classification_accuracy(pred_labels[usable], true_labels[usable]),
        ranking_accuracy=ranking_accuracy(preds, truths),
    )


@dataclass
class ModelComparison:
    ttest: TTestResult
    mean_gap: float
    significant_05: bool
    significant_01: bool


def compare_models(metric_a, metric_b) -> ModelComparison:
    """Paired-by-seed comparison of one metric between two models (a minus b)."""
    a = np.asarray(metric_a, dtype=np.float64)
    b = np.asarray(metric_b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError("need k >= 2 seed-paired runs")
    tt = paired_t(a, b)
    return ModelComparison(
        ttest=tt,
        mean_gap=float((a - b).mean()),
        significant_05=tt.p_value < 0.05,
        significant_01=tt.p_value < 0.01,
    )
