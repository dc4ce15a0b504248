"""Collaborative two-network training with ranking-based sample swapping.

Per mini-batch each network scores every sample with the group-lasso
ranking loss, keeps the ceil(gamma * B) lowest-scoring samples as its
"clean" set, and hands that set to its peer: f's classification loss is
computed on g's clean set and vice versa. Both networks additionally
minimise an MMD consistency term on the logits and maximise an MMD
disparity term on the tap-layer activations.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import MultiLabelDataset, round_half_away
from .discrepancy import KernelConfig, mmd_sq
from .evaluation import detection_metrics, map_scores, roc_auc
from .nn import (MlpConfig, Network, NetworkError, NetworkPair, SgdConfig, backward, bce_loss,
                 forward, forward_cached, init_pair, sgd_step, sigmoid)
from .noise import NoiseLedger
from .ranking import LassoConfig, group_lasso_batch


class CollabError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite during training."""


# ----------------------------------------------------------------------- configs


def adaptive_gamma(estimated_noise_rate: float) -> float:
    if not 0.0 <= estimated_noise_rate <= 0.5:
        raise CollabError(f"noise rate {estimated_noise_rate!r} outside [0, 0.5]")
    return 1.0 - estimated_noise_rate


@dataclass(frozen=True)
class SwapConfig:
    gamma: float = 1.0
    noise_rate_hint: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise CollabError(f"gamma={self.gamma!r} outside (0, 1]")
        if self.noise_rate_hint is not None:
            if not 0.0 <= self.noise_rate_hint <= 0.5:
                raise CollabError("noise_rate_hint outside [0, 0.5]")
            if abs(self.gamma - (1.0 - self.noise_rate_hint)) > 1e-12:
                raise CollabError("gamma must equal 1 - noise_rate_hint")

    @classmethod
    def from_noise_rate(cls, rate: float) -> "SwapConfig":
        return cls(gamma=adaptive_gamma(rate), noise_rate_hint=rate)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise CollabError(f"{name}={v!r} must be finite and non-negative")


@dataclass(frozen=True)
class CollabOptions:
    """Module switches used by the ablation variants."""
    selection: str = "lasso"          # "lasso" | "random"
    swap: bool = True                 # False: each network trains on its own clean set
    discrepancy_scope: str = "full"   # "full" | "selected"

    def __post_init__(self):
        if self.selection not in ("lasso", "random"):
            raise CollabError(f"unknown selection {self.selection!r}")
        if self.discrepancy_scope not in ("full", "selected"):
            raise CollabError(f"unknown discrepancy_scope {self.discrepancy_scope!r}")


# -------------------------------------------------------------------- swap + loss


def _n_low(gamma: float, B: int) -> int:
    # rounding guard: 0.7 * 10 is 7.000000000000001 in binary floating point
    return min(B, math.ceil(round(gamma * B, 9)))


@dataclass
class SwapDecision:
    low_f: np.ndarray
    high_f: np.ndarray
    low_g: np.ndarray
    high_g: np.ndarray
    lasso_f: np.ndarray
    lasso_g: np.ndarray


def _partition(values: np.ndarray, n_low: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    return np.sort(order[:n_low]), np.sort(order[n_low:])


def swap_select(lasso_f, lasso_g, gamma: float) -> SwapDecision:
    """Split each network's batch into its ceil(gamma*B) lowest-loss samples and the rest.

    Ties are broken by batch index. Index sets are returned sorted.
    """
    lasso_f = np.asarray(lasso_f, dtype=np.float64)
    lasso_g = np.asarray(lasso_g, dtype=np.float64)
    if lasso_f.shape != lasso_g.shape or lasso_f.ndim != 1:
        raise CollabError("lasso vectors must be equal-length 1-D arrays")
    if not 0.0 < gamma <= 1.0:
        raise CollabError(f"gamma={gamma!r} outside (0, 1]")
    k = _n_low(gamma, len(lasso_f))
    low_f, high_f = _partition(lasso_f, k)
    low_g, high_g = _partition(lasso_g, k)
    return SwapDecision(low_f, high_f, low_g, high_g, lasso_f, lasso_g)


def final_losses(bce_f_on_low_g: float, bce_g_on_low_f: float, L_C: float, L_D: float,
                 w: LossWeights) -> tuple[float, float]:
    """Combine the per-network classification losses with the shared discrepancy terms."""
    shared = w.lambda2 * L_C - w.lambda3 * L_D
    return w.lambda1 * bce_f_on_low_g + shared, w.lambda1 * bce_g_on_low_f + shared


# ---------------------------------------------------------------- step gradients


@dataclass
class StepResult:
    loss_f: float
    loss_g: float
    bce_f: float
    bce_g: float
    consistency: float
    disparity: float
    grads_f: object
    grads_g: object
    decision: SwapDecision
    rows_f: np.ndarray
    rows_g: np.ndarray
    grad_bce_f: np.ndarray   # lambda1-scaled BCE gradient w.r.t. f's logits
    grad_bce_g: np.ndarray


def _discrepancy(Pf, Pg, rows_f, rows_g, kernel, scope):
    """MMD value and per-network gradients; each network sees the peer as constant."""
    if scope == "full":
        value, gP, gQ = mmd_sq(Pf, Pg, kernel)
        return value, value, gP, gQ
    gradf = np.zeros_like(Pf)
    gradg = np.zeros_like(Pg)
    vf, gP, _ = mmd_sq(Pf[rows_f], Pg[rows_f], kernel)
    gradf[rows_f] = gP
    vg, _, gQ = mmd_sq(Pf[rows_g], Pg[rows_g], kernel)
    gradg[rows_g] = gQ
    return vf, vg, gradf, gradg


def collab_step(pair: NetworkPair, X: np.ndarray, Y: np.ndarray, gamma: float, kernel: KernelConfig,
                lasso: LassoConfig, w: LossWeights, options: CollabOptions = CollabOptions(),
                rng: Optional[np.random.Generator] = None) -> StepResult:
    """Losses and parameter gradients of both networks for one mini-batch."""
    f, g = pair.f, pair.g
    tap_f, log_f, cache_f = forward_cached(f, X)
    tap_g, log_g, cache_g = forward_cached(g, X)
    if options.selection == "lasso":
        score_f = group_lasso_batch(sigmoid(log_f), Y, lasso).total
        score_g = group_lasso_batch(sigmoid(log_g), Y, lasso).total
    else:
        if rng is None:
            raise CollabError("random selection needs a generator")
        score_f = rng.permutation(len(X)).astype(np.float64)
        score_g = rng.permutation(len(X)).astype(np.float64)
    decision = swap_select(score_f, score_g, gamma)
    rows_f = decision.low_g if options.swap else decision.low_f
    rows_g = decision.low_f if options.swap else decision.low_g

    bce_f, gb_f = bce_loss(log_f, Y, rows_f)
    bce_g, gb_g = bce_loss(log_g, Y, rows_g)
    gb_f *= w.lambda1
    gb_g *= w.lambda1

    lc_f = lc_g = ld_f = ld_g = 0.0
    glog_f, glog_g = gb_f.copy(), gb_g.copy()
    gtap_f = gtap_g = None
    if w.lambda2 > 0:
        lc_f, lc_g, gcf, gcg = _discrepancy(log_f, log_g, rows_f, rows_g, kernel, options.discrepancy_scope)
        glog_f += w.lambda2 * gcf
        glog_g += w.lambda2 * gcg
    if w.lambda3 > 0:
        ld_f, ld_g, gdf, gdg = _discrepancy(tap_f, tap_g, rows_f, rows_g, kernel, options.discrepancy_scope)
        gtap_f = -w.lambda3 * gdf
        gtap_g = -w.lambda3 * gdg

    loss_f = w.lambda1 * bce_f + w.lambda2 * lc_f - w.lambda3 * ld_f
    loss_g = w.lambda1 * bce_g + w.lambda2 * lc_g - w.lambda3 * ld_g
    if not (math.isfinite(loss_f) and math.isfinite(loss_g)):
        raise TrainingDiverged(f"non-finite loss (L_f={loss_f}, L_g={loss_g})")
    return StepResult(
        loss_f=loss_f, loss_g=loss_g, bce_f=bce_f, bce_g=bce_g,
        consistency=0.5 * (lc_f + lc_g), disparity=0.5 * (ld_f + ld_g),
        grads_f=backward(f, cache_f, glog_f, gtap_f),
        grads_g=backward(g, cache_g, glog_g, gtap_g),
        decision=decision, rows_f=rows_f, rows_g=rows_g, grad_bce_f=gb_f, grad_bce_g=gb_g,
    )


# ------------------------------------------------------------------------- train


@dataclass
class BatchTrace:
    epoch: int
    batch: int
    indices: np.ndarray
    gamma: float
    step: StepResult


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_f: float
    loss_g: float
    bce_f: float
    bce_g: float
    consistency: float
    disparity: float
    val_f: Optional[dict] = None
    val_g: Optional[dict] = None


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    selected: Optional[str] = None
    best_epoch: dict = field(default_factory=dict)
    # mean over epochs of the per-sample ranking loss (averaged over f and g)
    sample_ranking: Optional[np.ndarray] = None
    best_networks: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "selected": self.selected,
            "best_epoch": dict(self.best_epoch),
            "sample_ranking": None if self.sample_ranking is None else self.sample_ranking.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["epoch", "lr", "loss_f", "loss_g", "bce_f", "bce_g", "consistency", "disparity"]
        metrics = ["map_micro", "map_macro", "f1_micro"]
        w.writerow(cols + [f"val_{m}_{n}" for n in ("f", "g") for m in metrics])
        for e in self.epochs:
            row = [getattr(e, c) for c in cols]
            for val in (e.val_f, e.val_g):
                row += ["" if val is None else repr(val[m]) for m in metrics]
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def _val_metrics(net: Network, ds: MultiLabelDataset) -> dict:
    _, logits = forward(net, ds.features)
    rep = map_scores(sigmoid(logits), ds.truth)
    return {"map_micro": rep.map_micro, "map_macro": rep.map_macro, "f1_micro": rep.f1_micro}


def train(pair: NetworkPair, train_set: MultiLabelDataset, val_set: Optional[MultiLabelDataset],
          sgd: SgdConfig = SgdConfig(), kernel: KernelConfig = KernelConfig(),
          lasso: LassoConfig = LassoConfig(), swap: SwapConfig = SwapConfig(),
          weights: LossWeights = LossWeights(), seed: int = 0,
          options: CollabOptions = CollabOptions(),
          on_batch: Optional[Callable[[BatchTrace], None]] = None) -> tuple[NetworkPair, TrainReport]:
    """Train f and g jointly; returns the final pair and a per-epoch report.

    The report keeps, per network, a snapshot of the parameters from its
    best validation epoch (by mAP micro) for ``select_best``.
    """
    sgd.validate()
    if train_set.n_features != pair.f.config.n_inputs or train_set.n_classes != pair.f.config.n_outputs:
        raise CollabError("dataset shape does not match the network configuration")
    rng = np.random.default_rng(seed)
    n = train_set.n_samples
    X_all = train_set.features
    Y_all = train_set.labels.astype(np.float64)
    rank_sum = np.zeros(n)
    report = TrainReport()
    best = {"f": -np.inf, "g": -np.inf}

    for epoch in range(sgd.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(6)
        n_batches = 0
        for b, start in enumerate(range(0, n, sgd.batch_size)):
            idx = perm[start:start + sgd.batch_size]
            step = collab_step(pair, X_all[idx], Y_all[idx], swap.gamma, kernel, lasso, weights, options, rng)
            if on_batch is not None:
                on_batch(BatchTrace(epoch, b, idx, swap.gamma, step))
            if options.selection == "lasso":
                rank_sum[idx] += 0.5 * (step.decision.lasso_f + step.decision.lasso_g)
            try:
                pair = NetworkPair(sgd_step(pair.f, step.grads_f, epoch, sgd),
                                   sgd_step(pair.g, step.grads_g, epoch, sgd))
            except NetworkError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {exc}") from None
            sums += [step.loss_f, step.loss_g, step.bce_f, step.bce_g, step.consistency, step.disparity]
            n_batches += 1
        means = sums / max(n_batches, 1)
        rec = EpochRecord(epoch, sgd.lr(epoch), *map(float, means))
        if val_set is not None and val_set.n_samples:
            rec.val_f = _val_metrics(pair.f, val_set)
            rec.val_g = _val_metrics(pair.g, val_set)
            for tag, val, net in (("f", rec.val_f, pair.f), ("g", rec.val_g, pair.g)):
                if val["map_micro"] > best[tag]:
                    best[tag] = val["map_micro"]
                    report.best_epoch[tag] = epoch
                    report.best_networks[tag] = net
        report.epochs.append(rec)

    if options.selection == "random" and sgd.epochs:
        # ranking statistics still come from the lasso, evaluated at the end
        _, lf = forward(pair.f, X_all)
        _, lg = forward(pair.g, X_all)
        rank_sum = 0.5 * (group_lasso_batch(sigmoid(lf), Y_all, lasso).total
                          + group_lasso_batch(sigmoid(lg), Y_all, lasso).total) * sgd.epochs
    report.sample_ranking = rank_sum / max(sgd.epochs, 1)
    return pair, report


def select_best(pair: NetworkPair, report: TrainReport, use_best_epoch: bool = False) -> Network:
    """Pick f or g by best epoch-level validation mAP micro (ties go to f).

    The chosen network is returned with its final parameters; pass
    ``use_best_epoch=True`` to get the snapshot from its best epoch instead.
    """
    scored = [e for e in report.epochs if e.val_f is not None and e.val_g is not None]
    if not scored:
        raise CollabError("report has no validated epochs")
    best_f = max(e.val_f["map_micro"] for e in scored)
    best_g = max(e.val_g["map_micro"] for e in scored)
    tag = "f" if best_f >= best_g else "g"
    report.selected = tag
    final = pair.f if tag == "f" else pair.g
    return report.best_networks.get(tag, final) if use_best_epoch else final


# --------------------------------------------------------------- noise estimation


def estimate_noise_rate(train_set: MultiLabelDataset, candidates: Sequence[float], folds: int = 3,
                        warmup_epochs: int = 5, seed: int = 0, *, mlp: Optional[MlpConfig] = None,
                        sgd: SgdConfig = SgdConfig(), kernel: KernelConfig = KernelConfig(),
                        lasso: LassoConfig = LassoConfig(), weights: LossWeights = LossWeights(),
                        hidden: Sequence[int] = (64, 64)) -> float:
    """Pick the candidate noise rate whose swap rate cross-validates best.

    For every candidate r, a short run with gamma = 1 - r is trained on K-1
    folds and scored by held-out mAP micro (against the held-out labels as
    given, i.e. still noisy), taking the better of the two networks. The
    candidate with the highest mean score wins; ties go to the smaller rate.
    """
    cands = sorted(float(c) for c in candidates)
    if not cands or any(not 0.0 <= c <= 0.5 for c in cands):
        raise CollabError("candidates must be a nonempty list of rates in [0, 0.5]")
    if folds < 2:
        raise CollabError("need at least 2 folds")
    if len(cands) == 1:
        return cands[0]
    if mlp is None:
        mlp = MlpConfig((train_set.n_features, *hidden, train_set.n_classes), seed=seed)
    fold_of = np.random.default_rng([seed, 17]).permutation(train_set.n_samples) % folds
    warm = SgdConfig(sgd.initial_lr, sgd.decay, sgd.batch_size, warmup_epochs)

    best_rate, best_score = cands[0], -np.inf
    for r in cands:
        scores = []
        for k in range(folds):
            tr = train_set.take(np.flatnonzero(fold_of != k))
            ho = train_set.take(np.flatnonzero(fold_of == k))
            ho = MultiLabelDataset(ho.features, ho.labels, ho.class_names, ho.sample_ids)  # score noisy labels
            pair = init_pair(mlp, seed_f=seed * 2 + 11 + k, seed_g=seed * 2 + 12 + k)
            pair, _ = train(pair, tr, None, warm, kernel, lasso, SwapConfig.from_noise_rate(r), weights,
                            seed=seed + k)
            scores.append(max(_val_metrics(pair.f, ho)["map_micro"], _val_metrics(pair.g, ho)["map_micro"]))
        score = float(np.mean(scores))
        if score > best_score:
            best_rate, best_score = r, score
    return best_rate


# ---------------------------------------------------------------------- diagnose


@dataclass
class Suggestion:
    class_index: int
    action: str       # "add" (suspected missing label) or "remove" (suspected wrong label)
    magnitude: float


@dataclass
class NoiseReport:
    suspicion: np.ndarray
    missing_term: np.ndarray
    wrong_term: np.ndarray
    dominant_type: list[str]
    suggestions: list[list[Suggestion]]
    detection: Optional[dict] = None

    def flagged(self, fraction: float) -> np.ndarray:
        """Indices of the top ``fraction`` of samples by suspicion (ties by index)."""
        k = min(len(self.suspicion), round_half_away(fraction * len(self.suspicion)))
        order = np.argsort(-self.suspicion, kind="stable")
        return np.sort(order[:k])

    def to_dict(self, sample_ids: Optional[Sequence[str]] = None, class_names: Optional[Sequence[str]] = None):
        ids = sample_ids or [str(i) for i in range(len(self.suspicion))]
        names = class_names
        samples = []
        for i, sid in enumerate(ids):
            samples.append({
                "sample_id": sid,
                "suspicion": float(self.suspicion[i]),
                "missing_term": float(self.missing_term[i]),
                "wrong_term": float(self.wrong_term[i]),
                "dominant_type": self.dominant_type[i],
                "suggestions": [
                    {"class": names[s.class_index] if names else s.class_index, "action": s.action,
                     "magnitude": s.magnitude} for s in self.suggestions[i]],
            })
        return {"detection": self.detection, "samples": samples}

    def to_csv(self, sample_ids: Sequence[str], class_names: Sequence[str]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "suspicion", "dominant_type", "suggestions"])
        for i, sid in enumerate(sample_ids):
            sug = ";".join(f"{s.action}:{class_names[s.class_index]}" for s in self.suggestions[i])
            w.writerow([sid, repr(float(self.suspicion[i])), self.dominant_type[i], sug])
        return buf.getvalue()


def diagnose(pair: NetworkPair, dataset: MultiLabelDataset, lasso: LassoConfig = LassoConfig(),
             top_k: int = 1, ledger: Optional[NoiseLedger] = None,
             gamma: Optional[float] = None) -> NoiseReport:
    """Score every sample's label noise with both networks and suggest label flips.

    Suspicion is the mean group-lasso total of f and g. Suggestions rank
    label positions by their (unweighted, pair-averaged) group magnitude:
    unassigned labels with a large missing-label group suggest adding the
    label, assigned labels with a large wrong-label group suggest removing
    it. With a ledger, precision/recall are reported for flagging the top
    (1 - gamma) fraction of samples.
    """
    Y = dataset.labels
    res = []
    for net in (pair.f, pair.g):
        _, logits = forward(net, dataset.features)
        res.append(group_lasso_batch(sigmoid(logits), Y, lasso))
    suspicion = 0.5 * (res[0].total + res[1].total)
    missing = 0.5 * (res[0].missing_term + res[1].missing_term)
    wrong = 0.5 * (res[0].wrong_term + res[1].wrong_term)
    # a label's group is nonzero only on its own side (missing: unassigned, wrong: assigned)
    groups = 0.5 * (res[0].missing_groups + res[1].missing_groups) * (Y == 0) \
        + 0.5 * (res[0].wrong_groups + res[1].wrong_groups) * (Y == 1)

    dominant, suggestions = [], []
    for i in range(dataset.n_samples):
        if suspicion[i] == 0:
            dominant.append("none")
        else:
            dominant.append("missing" if missing[i] > wrong[i] else "wrong")
        order = np.argsort(-groups[i], kind="stable")[:top_k]
        suggestions.append([Suggestion(int(v), "add" if Y[i, v] == 0 else "remove", float(groups[i, v]))
                            for v in order if groups[i, v] > 0])

    report = NoiseReport(suspicion, missing, wrong, dominant, suggestions)
    if ledger is not None:
        gamma = 1.0 if gamma is None else gamma
        flagged = report.flagged(1.0 - gamma)
        noisy = ledger.noisy_sample_set
        det = {"gamma": gamma, "n_flagged": int(len(flagged)), "n_noisy": len(noisy)}
        if not noisy:
            det.update(precision=1.0, recall=1.0, no_noise=True, roc_auc=None)
        else:
            p, r = detection_metrics(noisy, flagged.tolist())
            is_noisy = np.zeros(dataset.n_samples, dtype=bool)
            is_noisy[list(noisy)] = True
            auc = roc_auc(suspicion, is_noisy) if 0 < is_noisy.sum() < len(is_noisy) else None
            det.update(precision=p, recall=r, no_noise=False, roc_auc=auc)
        report.detection = det
    return report
