"""Ranking metrics over scored test sets.

AUROC uses the pairwise rank formulation (ties get half credit), computed in
O(n log n) via ranks; AUPRC is step-wise average precision with ties broken
by stable input order.  A trapezoidal ROC integration is provided as the
cross-check the tests run against the rank formulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """The scored set cannot support the requested metric."""


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_lists(cls, scores, labels) -> "ScoredSet":
        s = np.asarray(scores, dtype=np.float64)
        y = np.asarray(labels)
        if s.ndim != 1 or y.ndim != 1 or s.size != y.size:
            raise MetricError("scores and labels must be equal-length vectors")
        if s.size == 0:
            raise MetricError("scored set is empty")
        if not np.isin(y, (0, 1)).all():
            raise MetricError("labels must be 0 or 1")
        return cls(s, y.astype(np.int64))

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())


def _ranks_with_tie_average(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(s: ScoredSet) -> float:
    """P(score of a random positive > score of a random negative) + half ties."""
    if s.n_pos == 0 or s.n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    ranks = _ranks_with_tie_average(s.scores)
    rank_sum_pos = ranks[s.labels == 1].sum()
    u = rank_sum_pos - s.n_pos * (s.n_pos + 1) / 2.0
    return float(u / (s.n_pos * s.n_neg))


def auroc_trapezoidal(s: ScoredSet) -> float:
    """ROC curve integration; must agree with auroc() to float precision."""
    if s.n_pos == 0 or s.n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    thresholds = np.unique(s.scores)[::-1]
    tps = [0.0]
    fps = [0.0]
    for th in thresholds:
        sel = s.scores >= th
        tps.append(float((s.labels[sel] == 1).sum()))
        fps.append(float((s.labels[sel] == 0).sum()))
    tpr = np.array(tps) / s.n_pos
    fpr = np.array(fps) / s.n_neg
    return float(np.trapezoid(tpr, fpr))


def auprc(s: ScoredSet) -> float:
    """Average precision: sum of precision-at-rank over positives, in
    score-descending order, times the 1/n_pos recall step.  Equal scores keep
    their input order (stable sort)."""
    if s.n_pos == 0:
        raise MetricError("AUPRC needs at least one positive")
    order = np.argsort(-s.scores, kind="stable")
    labels = s.labels[order]
    hits = 0
    total = 0.0
    for rank, y in enumerate(labels, start=1):
        if y == 1:
            hits += 1
            total += hits / rank
    return float(total / s.n_pos)


def report(s: ScoredSet, seed: int) -> dict[str, float | int]:
    return {
        "auroc": auroc(s),
        "auprc": auprc(s),
        "n": int(s.labels.size),
        "n_pos": s.n_pos,
        "seed": int(seed),
    }


def format_report(values: dict, extra: dict | None = None) -> str:
    """Flat key-value text; floats rendered with repr for exact round-trips."""
    lines = []
    items = dict(values)
    if extra:
        items.update(extra)
    for key, val in items.items():
        lines.append(f"{key} {val!r}" if isinstance(val, float) else f"{key} {val}")
    return "\n".join(lines) + "\n"
