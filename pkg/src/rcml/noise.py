"""Random-noise-per-sample (RNS) label corruption with a ground-truth flip ledger."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset import round_half_away

ADDED = "added"      # 0 -> 1, a wrong label
REMOVED = "removed"  # 1 -> 0, a missing label


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    sampling_rate: float
    class_rate: float
    seed: int = 0

    def validate(self) -> None:
        for name in ("sampling_rate", "class_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise NoiseError(f"{name}={v!r} outside [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise NoiseError("seed must be a 64-bit unsigned integer")

    @property
    def effective_rate(self) -> float:
        return self.sampling_rate * self.class_rate


@dataclass(frozen=True)
class Flip:
    sample_index: int
    class_index: int
    direction: str


@dataclass
class NoiseLedger:
    flips: list[Flip] = field(default_factory=list)
    spec: NoiseSpec | None = None

    @property
    def noisy_sample_set(self) -> set[int]:
        return {f.sample_index for f in self.flips}

    def apply(self, labels: np.ndarray) -> np.ndarray:
        """Toggle every recorded entry; applying twice is the identity."""
        out = np.array(labels, copy=True)
        for f in self.flips:
            out[f.sample_index, f.class_index] = 1 - out[f.sample_index, f.class_index]
        return out

    def counts(self) -> dict[str, int]:
        added = sum(f.direction == ADDED for f in self.flips)
        return {"flips": len(self.flips), "added": added, "removed": len(self.flips) - added,
                "noisy_samples": len(self.noisy_sample_set)}

    def to_json(self, sample_ids: Sequence[str], class_names: Sequence[str]) -> str:
        doc = {
            "spec": None if self.spec is None else asdict(self.spec),
            "flips": [
                {"sample_id": sample_ids[f.sample_index], "class_name": class_names[f.class_index],
                 "direction": f.direction}
                for f in self.flips
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str, sample_ids: Sequence[str], class_names: Sequence[str]) -> "NoiseLedger":
        doc = json.loads(text)
        sid = {s: i for i, s in enumerate(sample_ids)}
        cid = {c: j for j, c in enumerate(class_names)}
        try:
            flips = [Flip(sid[r["sample_id"]], cid[r["class_name"]], r["direction"]) for r in doc["flips"]]
        except KeyError as exc:
            raise NoiseError(f"ledger refers to unknown id or class: {exc}") from None
        spec = NoiseSpec(**doc["spec"]) if doc.get("spec") else None
        return cls(flips=flips, spec=spec)


def inject_rns(labels: np.ndarray, spec: NoiseSpec) -> tuple[np.ndarray, NoiseLedger]:
    """Flip round(class_rate*V) label entries in each of round(sampling_rate*N) samples.

    Samples and class positions are drawn uniformly without replacement; a
    position is flipped whatever its current value, so both missing and
    wrong labels arise. The input matrix is left untouched.
    """
    spec.validate()
    labels = np.asarray(labels)
    if labels.ndim != 2 or not np.all((labels == 0) | (labels == 1)):
        raise NoiseError("non-binary input labels")
    n, v = labels.shape
    n_sel = round_half_away(spec.sampling_rate * n)
    k = round_half_away(spec.class_rate * v)

    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(n, size=n_sel, replace=False)) if n_sel else np.zeros(0, dtype=np.int64)
    noisy = np.array(labels, copy=True)
    flips = []
    for i in chosen:
        for j in np.sort(rng.choice(v, size=k, replace=False)):
            old = labels[i, j]
            noisy[i, j] = 1 - old
            flips.append(Flip(int(i), int(j), REMOVED if old == 1 else ADDED))
    return noisy, NoiseLedger(flips=flips, spec=spec)


def rate_to_spec(effective_rate: float, seed: int = 0) -> NoiseSpec:
    """Spread a single noise rate r over 2r of the samples at class rate 1/2 (capped at all samples)."""
    if not 0.0 <= effective_rate <= 0.5:
        raise NoiseError(f"noise rate {effective_rate!r} outside [0, 0.5]")
    if effective_rate == 0:
        return NoiseSpec(0.0, 0.0, seed)
    sampling = min(1.0, 2.0 * effective_rate)
    return NoiseSpec(sampling, effective_rate / sampling, seed)
