"""Multi-label datasets: container, CSV I/O, synthetic generator and splits."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class DatasetError(ValueError):
    """Base class for dataset validation and loading errors."""


class ShapeMismatchError(DatasetError):
    pass


class NonBinaryLabelError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


class UnmatchedIdError(DatasetError):
    pass


def round_half_away(x: float) -> int:
    """Nearest integer, ties away from zero (Python's round() ties to even)."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MultiLabelDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    sample_ids: tuple[str, ...]
    clean_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if feats.ndim != 2 or labels.ndim != 2:
            raise ShapeMismatchError("features and labels must be 2-D")
        n, d = feats.shape
        if labels.shape[0] != n:
            raise ShapeMismatchError(f"features have {n} rows, labels have {labels.shape[0]}")
        if d < 1:
            raise ShapeMismatchError("feature dimension must be >= 1")
        if labels.shape[1] < 2:
            raise ShapeMismatchError("need at least 2 classes")
        if not np.all(np.isfinite(feats)):
            raise DatasetError("features contain non-finite values")
        if not np.all((labels == 0) | (labels == 1)):
            raise NonBinaryLabelError("non-binary label")
        if len(self.class_names) != labels.shape[1]:
            raise ShapeMismatchError("class_names length does not match label columns")
        if len(self.sample_ids) != n:
            raise ShapeMismatchError("sample_ids length does not match rows")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int8)))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        if self.clean_labels is not None:
            clean = np.asarray(self.clean_labels)
            if clean.shape != labels.shape:
                raise ShapeMismatchError("clean_labels shape differs from labels")
            if not np.all((clean == 0) | (clean == 1)):
                raise NonBinaryLabelError("non-binary label")
            object.__setattr__(self, "clean_labels", _frozen(clean.astype(np.int8)))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def truth(self) -> np.ndarray:
        """Labels to evaluate against: the retained clean labels when present."""
        return self.clean_labels if self.clean_labels is not None else self.labels

    def take(self, indices: Sequence[int]) -> "MultiLabelDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultiLabelDataset(
            features=self.features[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            clean_labels=None if self.clean_labels is None else self.clean_labels[idx],
        )

    def with_labels(self, labels: np.ndarray, keep_clean: bool = True) -> "MultiLabelDataset":
        """Copy with replaced labels; the current truth is retained as clean_labels."""
        return MultiLabelDataset(
            features=self.features,
            labels=labels,
            class_names=self.class_names,
            sample_ids=self.sample_ids,
            clean_labels=self.truth if keep_clean else None,
        )


# --------------------------------------------------------------------------- CSV


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ShapeMismatchError(f"{path}: empty file")
    return rows[0], rows[1:]


def _index_rows(path: Path, header: list[str], rows: list[list[str]]) -> dict[str, list[str]]:
    if not header or header[0] != "id":
        raise ShapeMismatchError(f"{path}: first column must be 'id'")
    out: dict[str, list[str]] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ShapeMismatchError(
                f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        sid = row[0]
        if not _ID_RE.match(sid):
            raise DatasetError(f"{path}:{lineno}: invalid id {sid!r}")
        if sid in out:
            raise DuplicateIdError(f"duplicate id: {sid}")
        out[sid] = row[1:]
    return out


def load_dataset(features_path, labels_path) -> MultiLabelDataset:
    """Load a dataset from the feature/label CSV pair, rows ordered by ascending id."""
    features_path, labels_path = Path(features_path), Path(labels_path)
    f_header, f_rows = _read_csv(features_path)
    l_header, l_rows = _read_csv(labels_path)
    feats = _index_rows(features_path, f_header, f_rows)
    labs = _index_rows(labels_path, l_header, l_rows)

    only_f = sorted(set(feats) - set(labs))
    only_l = sorted(set(labs) - set(feats))
    if only_f or only_l:
        raise UnmatchedIdError(f"unmatched id: {','.join(only_f)}/{','.join(only_l)}")
    if len(f_header) < 2:
        raise ShapeMismatchError(f"{features_path}: no feature columns")

    ids = sorted(feats)
    d = len(f_header) - 1
    X = np.empty((len(ids), d), dtype=np.float64)
    Y = np.empty((len(ids), len(l_header) - 1), dtype=np.int8)
    for i, sid in enumerate(ids):
        try:
            X[i] = [float(v) for v in feats[sid]]
        except ValueError as exc:
            raise DatasetError(f"{features_path}: bad number in row {sid}: {exc}") from None
        for j, cell in enumerate(labs[sid]):
            if cell.strip() not in ("0", "1"):
                raise NonBinaryLabelError(f"non-binary label: {cell!r} at id {sid}, class {l_header[j + 1]}")
            Y[i, j] = int(cell)
    return MultiLabelDataset(features=X, labels=Y, class_names=tuple(l_header[1:]), sample_ids=tuple(ids))


def write_labels_csv(path, sample_ids: Sequence[str], class_names: Sequence[str], labels: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *class_names])
        for sid, row in zip(sample_ids, labels):
            w.writerow([sid, *(int(v) for v in row)])


def save_dataset(ds: MultiLabelDataset, features_path, labels_path) -> None:
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"f{j}" for j in range(ds.n_features))])
        for sid, row in zip(ds.sample_ids, ds.features):
            w.writerow([sid, *(repr(float(v)) for v in row)])
    write_labels_csv(labels_path, ds.sample_ids, ds.class_names, ds.labels)


# --------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    N: int = 2000
    V: int = 8
    d: int = 16
    prototypes_per_class: int = 3
    label_radius: float = 3.8
    feature_noise_sigma: float = 0.4
    seed: int = 7
    max_mixture: int = 4

    def validate(self) -> None:
        if self.N < 0:
            raise DatasetError("N must be >= 0")
        if self.V < 2 or self.d < 1 or self.prototypes_per_class < 1 or self.max_mixture < 1:
            raise DatasetError("V >= 2, d >= 1, prototypes_per_class >= 1 and max_mixture >= 1 required")
        if not (self.label_radius > 0 and self.feature_noise_sigma > 0):
            raise DatasetError("label_radius and feature_noise_sigma must be positive")
        if not 0 <= self.seed < 2**64:
            raise DatasetError("seed must be a 64-bit unsigned integer")


def synthetic_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """Prototype points of shape (V, prototypes_per_class, d) for a spec."""
    rng = np.random.default_rng(spec.seed)
    return rng.standard_normal((spec.V, spec.prototypes_per_class, spec.d))


def proximity_labels(X: np.ndarray, prototypes: np.ndarray, radius: float) -> np.ndarray:
    """Label v is on iff some prototype of class v lies within ``radius``."""
    diff = X[:, None, None, :] - prototypes[None, :, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))  # (n, V, P)
    return (dist.min(axis=2) <= radius).astype(np.int8)


def generate_synthetic(spec: SyntheticSpec) -> MultiLabelDataset:
    """Prototype-mixture dataset whose labels follow the proximity rule.

    Each candidate sample mixes 1..max_mixture randomly chosen prototypes with
    Dirichlet weights and adds isotropic Gaussian noise. Candidates with no
    label within ``label_radius`` are discarded and redrawn.
    """
    spec.validate()
    protos = synthetic_prototypes(spec)
    flat = protos.reshape(-1, spec.d)
    # separate stream so prototypes do not depend on N
    rng = np.random.default_rng([spec.seed, 1])

    X_parts, Y_parts, have = [], [], 0
    while have < spec.N:
        m = max(64, 2 * (spec.N - have))
        k = rng.integers(1, spec.max_mixture + 1, size=m)
        picks = np.stack([rng.permutation(len(flat))[: spec.max_mixture] for _ in range(m)])
        w = rng.dirichlet(np.ones(spec.max_mixture), size=m)
        w[np.arange(spec.max_mixture)[None, :] >= k[:, None]] = 0.0
        w /= w.sum(axis=1, keepdims=True)
        X = np.einsum("nk,nkd->nd", w, flat[picks])
        X += spec.feature_noise_sigma * rng.standard_normal((m, spec.d))
        Y = proximity_labels(X, protos, spec.label_radius)
        keep = Y.sum(axis=1) > 0
        X_parts.append(X[keep])
        Y_parts.append(Y[keep])
        have += int(keep.sum())

    X = np.concatenate(X_parts)[: spec.N] if X_parts else np.zeros((0, spec.d))
    Y = np.concatenate(Y_parts)[: spec.N] if Y_parts else np.zeros((0, spec.V), dtype=np.int8)
    width = max(5, len(str(max(spec.N - 1, 0))))
    return MultiLabelDataset(
        features=X,
        labels=Y,
        class_names=tuple(f"class_{v}" for v in range(spec.V)),
        sample_ids=tuple(f"s{i:0{width}d}" for i in range(spec.N)),
        clean_labels=Y,
    )


# ------------------------------------------------------------------------ splits


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise DatasetError("split fractions must lie in [0, 1]")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise DatasetError(f"split fractions sum to {sum(fr)!r}, not 1")
        if not 0 <= self.seed < 2**64:
            raise DatasetError("seed must be a 64-bit unsigned integer")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    spec.validate()
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = min(n, round_half_away(spec.train_fraction * n))
    n_val = min(n - n_train, round_half_away(spec.val_fraction * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(ds: MultiLabelDataset, spec: SplitSpec):
    """Seeded train/val/test partition; the test split takes the rounding remainder."""
    tr, va, te = split_indices(ds.n_samples, spec)
    return ds.take(tr), ds.take(va), ds.take(te)
