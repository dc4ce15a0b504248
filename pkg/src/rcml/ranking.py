"""Pairwise ranking error and the per-sample group-lasso ranking loss.

The ranking error between an assigned class l and an unassigned class l'
is the hinge ``max(0, 1 - 2 (p_l - p_l'))``. It vanishes once the assigned
class outranks the unassigned one by a margin of 0.5, and is positive
otherwise. (Read literally, the published formula has the opposite sign
inside the bracket, ``max(0, 2 (p_l - p_l') + 1)``, which would penalise
correct rankings; the form used here is the one that agrees with the
intended "zero when correctly predicted" behaviour.)

Group structure, for a single sample with assigned set L and unassigned set L':

* missing-label term: alpha * sum over l' in L' of sqrt(sum over l in L of E(l, l'))
* wrong-label term:   beta  * sum over l in L  of sqrt(sum over l' in L' of E(l, l'))

The loss only ranks samples; it is never differentiated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RankingError(ValueError):
    pass


@dataclass(frozen=True)
class LassoConfig:
    alpha: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise RankingError(f"alpha={self.alpha!r} outside [0, 1]")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha


@dataclass
class RankingBreakdown:
    total: float
    missing_term: float
    wrong_term: float
    missing_group_by_label: dict[int, float] = field(default_factory=dict)
    wrong_group_by_label: dict[int, float] = field(default_factory=dict)

    @property
    def dominant_type(self) -> str:
        if self.total == 0:
            return "none"
        return "missing" if self.missing_term > self.wrong_term else "wrong"


def ranking_error(p_assigned: float, p_unassigned: float) -> float:
    for p in (p_assigned, p_unassigned):
        if not 0.0 <= p <= 1.0:
            raise RankingError(f"probability {p!r} outside [0, 1]")
    return max(0.0, 1.0 - 2.0 * (p_assigned - p_unassigned))


@dataclass
class LassoBatch:
    """Vectorised breakdown for a batch; group arrays are zero outside their label set."""
    total: np.ndarray          # (B,)
    missing_term: np.ndarray   # (B,)
    wrong_term: np.ndarray     # (B,)
    missing_groups: np.ndarray  # (B, V), nonzero only at unassigned labels
    wrong_groups: np.ndarray    # (B, V), nonzero only at assigned labels


def group_lasso_batch(probs: np.ndarray, assigned: np.ndarray, cfg: LassoConfig) -> LassoBatch:
    probs = np.asarray(probs, dtype=np.float64)
    assigned = np.asarray(assigned)
    if probs.shape != assigned.shape or probs.ndim != 2:
        raise RankingError(f"shape mismatch: probs {probs.shape} vs labels {assigned.shape}")
    if not np.all((assigned == 0) | (assigned == 1)):
        raise RankingError("non-binary assigned vector")
    if np.any(probs < 0) or np.any(probs > 1):
        raise RankingError("probabilities outside [0, 1]")
    a = assigned.astype(np.float64)
    # E[b, l, l'] for l assigned and l' unassigned, zero elsewhere
    E = np.maximum(0.0, 1.0 - 2.0 * (probs[:, :, None] - probs[:, None, :]))
    E *= a[:, :, None] * (1.0 - a)[:, None, :]
    missing_groups = np.sqrt(E.sum(axis=1))  # indexed by l'
    wrong_groups = np.sqrt(E.sum(axis=2))    # indexed by l
    missing = cfg.alpha * missing_groups.sum(axis=1)
    wrong = cfg.beta * wrong_groups.sum(axis=1)
    return LassoBatch(missing + wrong, missing, wrong, missing_groups, wrong_groups)


def group_lasso(probs, assigned, cfg: LassoConfig) -> RankingBreakdown:
    probs = np.asarray(probs, dtype=np.float64)
    assigned = np.asarray(assigned)
    if probs.ndim != 1 or probs.shape != assigned.shape:
        raise RankingError("probs and assigned must be equal-length vectors")
    res = group_lasso_batch(probs[None, :], assigned[None, :], cfg)
    return RankingBreakdown(
        total=float(res.total[0]),
        missing_term=float(res.missing_term[0]),
        wrong_term=float(res.wrong_term[0]),
        missing_group_by_label={int(v): float(res.missing_groups[0, v]) for v in np.flatnonzero(assigned == 0)},
        wrong_group_by_label={int(v): float(res.wrong_groups[0, v]) for v in np.flatnonzero(assigned == 1)},
    )
