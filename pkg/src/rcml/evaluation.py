"""Multi-label ranking metrics and noisy-sample detection metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

F1_THRESHOLD = 0.5


class UndefinedAPError(ValueError):
    """Average precision requested for a ranking with no positives."""


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    map_macro: float
    map_micro: float
    f1_micro: float
    ap_per_class: dict[str, float] = field(default_factory=dict)
    skipped_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_rows(self) -> list[str]:
        rows = ["metric,value",
                f"f1_micro,{self.f1_micro!r}",
                f"map_micro,{self.map_micro!r}",
                f"map_macro,{self.map_macro!r}"]
        rows += [f"ap[{name}],{v!r}" for name, v in self.ap_per_class.items()]
        return rows


def average_precision(scores, truth) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive.

    Ranks by descending score, ties broken by ascending index.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel()
    if scores.shape != truth.shape:
        raise MetricError("scores and truth differ in length")
    n_pos = int(np.sum(truth == 1))
    if n_pos == 0:
        raise UndefinedAPError("undefined AP: no positives")
    order = np.argsort(-scores, kind="stable")
    hits = (truth[order] == 1)
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.mean())


def f1_micro(scores, truth, threshold: float = F1_THRESHOLD) -> float:
    pred = np.asarray(scores) >= threshold
    truth = np.asarray(truth) == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def map_scores(scores, truth, class_names: Optional[Sequence[str]] = None) -> MetricReport:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 2:
        raise MetricError(f"shape mismatch: {scores.shape} vs {truth.shape}")
    V = scores.shape[1]
    names = list(class_names) if class_names is not None else [str(v) for v in range(V)]
    ap, skipped = {}, []
    for v, name in enumerate(names):
        if np.any(truth[:, v] == 1):
            ap[name] = average_precision(scores[:, v], truth[:, v])
        else:
            skipped.append(name)
    if not ap:
        raise MetricError("every class has zero positives")
    return MetricReport(
        map_macro=float(np.mean(list(ap.values()))),
        map_micro=average_precision(scores.ravel(), truth.ravel()),
        f1_micro=f1_micro(scores, truth),
        ap_per_class=ap,
        skipped_classes=skipped,
    )


def detection_metrics(noisy: Iterable[int], flagged: Iterable[int]) -> tuple[float, float]:
    """Precision and recall of flagged samples against the truly noisy ones.

    ``noisy`` may be a NoiseLedger or any iterable of sample indices. Empty
    flagged sets give precision 1.0; an empty noisy set gives recall 1.0.
    """
    noisy = set(getattr(noisy, "noisy_sample_set", noisy))
    flagged = set(flagged)
    hit = len(noisy & flagged)
    precision = hit / len(flagged) if flagged else 1.0
    recall = hit / len(noisy) if noisy else 1.0
    return precision, recall


def roc_auc(scores, is_positive) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both positives and negatives")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
