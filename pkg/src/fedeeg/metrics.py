"""Classification metrics and federation-level report assembly.

Positive class is preictal (label 1) at a fixed 0.5 threshold.  AUROC uses
the rank-sum formulation with midranks for ties, which matches exhaustive
pair counting exactly.  Reports carry per-client, pooled (concatenated),
and macro (unweighted client mean) views.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import model
from .data import ClientDataset
from .errors import SingleClassError

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


def confusion_from_scores(scores: np.ndarray, labels: np.ndarray) -> ConfusionCounts:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal 1-d")
    if scores.size == 0:
        raise ValueError("cannot build a confusion matrix from no predictions")
    pred = scores >= THRESHOLD
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return (counts.tp + counts.tn) / counts.total


def f1_score(counts: ConfusionCounts) -> float:
    """F1 for the positive class; defined as 0 when the denominator is 0."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 0.0
    return 2 * counts.tp / denom


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-sum AUROC with midrank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"AUROC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # Midrank: ties share the average of the 1-based ranks they span.
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(np.sum(ranks[labels == 1]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricTriple:
    accuracy: float
    f1: float
    auroc: float

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "f1": self.f1, "auroc": self.auroc}


@dataclass(frozen=True)
class MetricsReport:
    """Per-client, pooled, and macro metrics for one trained model."""

    per_client: dict[str, MetricTriple]
    pooled: MetricTriple
    macro: MetricTriple

    def as_dict(self) -> dict:
        return {
            "per_client": {k: v.as_dict() for k, v in self.per_client.items()},
            "pooled": self.pooled.as_dict(),
            "macro": self.macro.as_dict(),
        }


def _triple(scores: np.ndarray, labels: np.ndarray) -> MetricTriple:
    counts = confusion_from_scores(scores, labels)
    return MetricTriple(accuracy(counts), f1_score(counts), auroc(scores, labels))


def evaluate_global(
    params: np.ndarray,
    config: model.ModelConfig,
    test_sets: Mapping[str, ClientDataset],
) -> MetricsReport:
    """Score one parameter vector against every client's held-out set."""
    if not test_sets:
        raise ValueError("no test sets to evaluate")
    per_client = {}
    all_scores = []
    all_labels = []
    for name, ds in test_sets.items():
        scores = model.forward(params, config, ds.inputs)
        labels = np.asarray(ds.labels)
        per_client[name] = _triple(scores, labels)
        all_scores.append(scores)
        all_labels.append(labels)
    pooled = _triple(np.concatenate(all_scores), np.concatenate(all_labels))
    triples = list(per_client.values())
    macro = MetricTriple(
        accuracy=float(np.mean([t.accuracy for t in triples])),
        f1=float(np.mean([t.f1 for t in triples])),
        auroc=float(np.mean([t.auroc for t in triples])),
    )
    return MetricsReport(per_client, pooled, macro)


def summarize_reports(reports: list[MetricsReport]) -> dict[str, dict[str, tuple[float, float]]]:
    """Mean and sample std of every metric across repeated runs.

    Keys are scopes (client names plus ``pooled`` and ``macro``); values map
    metric name to (mean, std).  With a single report the std is 0.
    """
    if not reports:
        raise ValueError("no reports to summarize")
    scopes = ["pooled", "macro", *reports[0].per_client]
    for r in reports:
        if list(r.per_client) != list(reports[0].per_client):
            raise ValueError("reports cover different client sets")
    out: dict[str, dict[str, tuple[float, float]]] = {}
    for scope in scopes:
        metrics: dict[str, tuple[float, float]] = {}
        for metric in ("accuracy", "f1", "auroc"):
            values = []
            for r in reports:
                triple = r.per_client[scope] if scope in r.per_client else getattr(r, scope)
                values.append(getattr(triple, metric))
            arr = np.asarray(values, dtype=np.float64)
            std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            metrics[metric] = (float(arr.mean()), std)
        out[scope] = metrics
    return out


def format_mean_std(mean: float, std: float) -> str:
    """Percent-style ``66.2 (6.0)`` rendering of a metric across runs."""
    return f"{100.0 * mean:.1f} ({100.0 * std:.1f})"
