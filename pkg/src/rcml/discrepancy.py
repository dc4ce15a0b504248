"""Gaussian-RBF maximum mean discrepancy and the two discrepancy losses built on it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class DiscrepancyError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Kernel bandwidths.

    With ``sigmas=None`` the bandwidths are chosen per batch as
    ``multipliers * median pairwise distance`` of the pooled rows and then
    held constant for differentiation.
    """
    sigmas: Optional[tuple[float, ...]] = None
    multipliers: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        if self.sigmas is not None:
            object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
            if not self.sigmas or any(not s > 0 for s in self.sigmas):
                raise DiscrepancyError("sigmas must be a nonempty list of positive reals")
        object.__setattr__(self, "multipliers", tuple(float(s) for s in self.multipliers))
        if not self.multipliers or any(not s > 0 for s in self.multipliers):
            raise DiscrepancyError("multipliers must be positive")

    def resolve(self, P: np.ndarray, Q: np.ndarray) -> "KernelConfig":
        if self.sigmas is not None:
            return self
        return self.from_median(median_distance(np.concatenate([P, Q])))

    def from_median(self, kappa: float) -> "KernelConfig":
        return KernelConfig(sigmas=tuple(m * kappa for m in self.multipliers))


def median_distance(X: np.ndarray) -> float:
    """Median Euclidean distance over distinct row pairs; 1.0 when degenerate."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 2:
        return 1.0
    iu = np.triu_indices(len(X), k=1)
    return _median_of(np.sqrt(_sqdist(X, X)[iu]))


def _median_of(d: np.ndarray) -> float:
    med = float(np.median(d))
    return med if med > 1e-12 else 1.0


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # copy so A @ A.T takes the same BLAS path as A @ B.T (bitwise-equal Gram blocks)
    cross = A @ np.ascontiguousarray(B.T).copy()
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * cross
    return np.maximum(d2, 0.0)


def rbf_kernel(a, b, cfg: KernelConfig) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise DiscrepancyError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if cfg.sigmas is None:
        raise DiscrepancyError("rbf_kernel needs explicit sigmas")
    d2 = float(np.sum((a - b) ** 2))
    return float(np.mean([np.exp(-d2 / (2.0 * s * s)) for s in cfg.sigmas]))


def _gram(d2, sigmas):
    """Kernel matrix K and W = mean_s K_s / s^2 (the factor in dK/dA)."""
    K = np.zeros_like(d2)
    W = np.zeros_like(d2)
    for s in sigmas:
        ks = np.exp(-d2 / (2.0 * s * s))
        K += ks
        W += ks / (s * s)
    n = len(sigmas)
    return K / n, W / n


def mmd_sq(P, Q, cfg: KernelConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Biased squared-MMD estimate between two equal-size samples, with gradients.

    value = (sum K(P,P) - 2 sum K(P,Q) + sum K(Q,Q)) / m^2
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if Q.ndim == 1:
        Q = Q[:, None]
    if P.shape[0] != Q.shape[0]:
        raise DiscrepancyError(f"sample count mismatch: {P.shape[0]} vs {Q.shape[0]}")
    if P.shape[1] != Q.shape[1]:
        raise DiscrepancyError(f"dimension mismatch: {P.shape[1]} vs {Q.shape[1]}")
    m = P.shape[0]
    if m < 1:
        raise DiscrepancyError("need at least one sample")
    d2pp, d2pq, d2qq = _sqdist(P, P), _sqdist(P, Q), _sqdist(Q, Q)
    if cfg.sigmas is None:
        iu = np.triu_indices(m, k=1)
        pooled = np.concatenate([d2pp[iu], d2qq[iu], d2pq.ravel()])
        cfg = cfg.from_median(_median_of(np.sqrt(pooled)))
    Kpp, Wpp = _gram(d2pp, cfg.sigmas)
    Kpq, Wpq = _gram(d2pq, cfg.sigmas)
    Kqq, Wqq = _gram(d2qq, cfg.sigmas)
    value = (Kpp.sum() - 2.0 * Kpq.sum() + Kqq.sum()) / (m * m)

    # d k(a,b)/da = -W(a,b) (a - b)
    gP = -2.0 * (P * Wpp.sum(1)[:, None] - Wpp @ P) + 2.0 * (P * Wpq.sum(1)[:, None] - Wpq @ Q)
    gQ = -2.0 * (Q * Wqq.sum(1)[:, None] - Wqq @ Q) + 2.0 * (Q * Wpq.sum(0)[:, None] - Wpq.T @ P)
    return max(float(value), 0.0), gP / (m * m), gQ / (m * m)


def disparity_loss(tap_f, tap_g, cfg: KernelConfig):
    """MMD between the two networks' tap-layer activations (maximised during training)."""
    return mmd_sq(tap_f, tap_g, cfg)


def consistency_loss(logits_f, logits_g, cfg: KernelConfig):
    """MMD between the two networks' output logits (minimised during training)."""
    return mmd_sq(logits_f, logits_g, cfg)

