"""Experiment configuration, method presets and noise-rate sweeps."""
from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .collab import (CollabOptions, LossWeights, SwapConfig, adaptive_gamma, diagnose, estimate_noise_rate,
                     select_best, train)
from .dataset import MultiLabelDataset, SplitSpec, SyntheticSpec, generate_synthetic, load_dataset, split
from .discrepancy import KernelConfig
from .evaluation import map_scores
from .nn import MlpConfig, SgdConfig, forward, init_pair, sigmoid
from .noise import inject_rns, rate_to_spec
from .ranking import LassoConfig

CONFIG_VERSION = 1
METHODS = ("rcml", "bce_baseline", "rcml_no_mmd", "rcml_no_lasso", "rcml_no_swap")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSource:
    synthetic: Optional[dict] = None
    features_path: Optional[str] = None
    labels_path: Optional[str] = None


@dataclass
class MlpSection:
    hidden: list = field(default_factory=lambda: [64, 64])
    tap_layer: Optional[int] = None
    init_scale: float = 1.0


@dataclass
class SwapSection:
    gamma: Optional[float] = None         # fixed swap rate; overrides everything else
    estimate: bool = False                # estimate the noise rate by cross-validation
    candidates: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    folds: int = 3
    warmup_epochs: int = 5


@dataclass
class ExperimentConfig:
    """Resolved experiment description.

    Unless ``swap.gamma`` is fixed or ``swap.estimate`` is set, the swap
    rate is 1 - (injected noise rate), i.e. the noise rate is taken as known.
    """
    config_version: int = CONFIG_VERSION
    dataset: DatasetSource = field(default_factory=lambda: DatasetSource(synthetic={}))
    split: dict = field(default_factory=dict)
    noise_rates: list = field(default_factory=lambda: [0.0])
    method: Any = "rcml"
    mlp: MlpSection = field(default_factory=MlpSection)
    sgd: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)
    lasso: dict = field(default_factory=dict)
    swap: SwapSection = field(default_factory=SwapSection)
    weights: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    top_k: int = 2
    output_dir: Optional[str] = None

    @property
    def methods(self) -> list[str]:
        return [self.method] if isinstance(self.method, str) else list(self.method)

    # typed views; constructing them validates the sections
    def split_spec(self) -> SplitSpec:
        return _build(SplitSpec, self.split, "split")

    def synthetic_spec(self) -> SyntheticSpec:
        return _build(SyntheticSpec, self.dataset.synthetic or {}, "dataset.synthetic")

    def sgd_config(self) -> SgdConfig:
        return _build(SgdConfig, self.sgd, "sgd")

    def kernel_config(self) -> KernelConfig:
        return _build(KernelConfig, self.kernel, "kernel")

    def lasso_config(self) -> LassoConfig:
        return _build(LassoConfig, self.lasso, "lasso")

    def loss_weights(self) -> LossWeights:
        return _build(LossWeights, self.weights, "weights")

    def collab_options(self) -> CollabOptions:
        return _build(CollabOptions, self.options, "options")

    def validate(self) -> None:
        try:
            self._validate()
        except ConfigError:
            raise
        except ValueError as exc:  # section-level errors from the typed builders
            raise ConfigError(str(exc)) from None

    def _validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {self.config_version!r}")
        src = self.dataset
        if (src.synthetic is None) == (src.features_path is None and src.labels_path is None):
            raise ConfigError("dataset needs exactly one of 'synthetic' or features_path/labels_path")
        if src.synthetic is None and not (src.features_path and src.labels_path):
            raise ConfigError("dataset needs both features_path and labels_path")
        if src.synthetic is not None:
            self.synthetic_spec().validate()
        self.split_spec().validate()
        if not self.noise_rates or any(not isinstance(r, (int, float)) or not 0 <= r <= 0.5
                                       for r in self.noise_rates):
            raise ConfigError("noise_rates must be a nonempty list of rates in [0, 0.5]")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
        if not self.seeds or any(not isinstance(s, int) or not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of unsigned 64-bit integers")
        if not self.mlp.hidden or any(not isinstance(h, int) or h < 1 for h in self.mlp.hidden):
            raise ConfigError("mlp.hidden must list positive layer widths")
        if self.swap.gamma is not None and not 0 < self.swap.gamma <= 1:
            raise ConfigError("swap.gamma must lie in (0, 1]")
        if self.top_k < 0:
            raise ConfigError("top_k must be non-negative")
        for build in (self.sgd_config, self.kernel_config, self.lasso_config, self.loss_weights,
                      self.collab_options):
            obj = build()
            if hasattr(obj, "validate"):
                obj.validate()


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _strict(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _strict(type(default), value, name if where == "config" else f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    if "config_version" not in doc:
        raise ConfigError("missing config_version")
    cfg = _strict(ExperimentConfig, doc, "config")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def reference_config(**overrides) -> ExperimentConfig:
    """The desk-scale reference benchmark: 2000 samples, 8 classes, 16 features, 0.6/0.2/0.2 split."""
    cfg = ExperimentConfig(
        dataset=DatasetSource(synthetic=asdict(SyntheticSpec())),
        split=asdict(SplitSpec(0.6, 0.2, 0.2, seed=0)),
        noise_rates=[0.0],
        method="rcml",
        mlp=MlpSection(hidden=[256, 256], init_scale=1.0),
        sgd=asdict(SgdConfig(initial_lr=0.5, decay=0.99, batch_size=64, epochs=200)),
        kernel={"sigmas": None, "multipliers": [0.5, 1.0, 2.0]},
        lasso={"alpha": 0.2},
        weights=asdict(LossWeights()),
        options=asdict(CollabOptions()),
        seeds=[0, 1, 2],
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


# ------------------------------------------------------------------------- runs


def derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, dtype=np.uint64)[0])


def method_settings(method: str, weights: LossWeights, options: CollabOptions):
    """Loss weights, options and whether to force gamma = 1 for a method preset."""
    if method == "rcml":
        return weights, options, False
    if method == "bce_baseline":
        return LossWeights(weights.lambda1, 0.0, 0.0), CollabOptions(
            "lasso", False, options.discrepancy_scope), True
    if method == "rcml_no_mmd":
        return LossWeights(weights.lambda1, 0.0, 0.0), options, False
    if method == "rcml_no_lasso":
        return weights, CollabOptions("random", options.swap, options.discrepancy_scope), False
    if method == "rcml_no_swap":
        return weights, CollabOptions(options.selection, False, options.discrepancy_scope), False
    raise ConfigError(f"unknown method {method!r}")


def load_source(cfg: ExperimentConfig) -> MultiLabelDataset:
    if cfg.dataset.synthetic is not None:
        return generate_synthetic(cfg.synthetic_spec())
    return load_dataset(cfg.dataset.features_path, cfg.dataset.labels_path)


@dataclass
class RunResult:
    method: str
    noise_rate: float
    seed: int
    gamma: float
    estimated_noise_rate: Optional[float]
    test: dict
    detection: Optional[dict]
    selected: str
    pair: Any = field(repr=False, default=None)
    report: Any = field(repr=False, default=None)
    ledger: Any = field(repr=False, default=None)
    noise_report: Any = field(repr=False, default=None)
    splits: Any = field(repr=False, default=None)

    def summary(self) -> dict:
        return {"method": self.method, "noise_rate": self.noise_rate, "seed": self.seed, "gamma": self.gamma,
                "estimated_noise_rate": self.estimated_noise_rate, "selected_network": self.selected,
                "test": self.test, "detection": self.detection}


def prepare_splits(cfg: ExperimentConfig, rate: float, seed: int, source: Optional[MultiLabelDataset] = None):
    """Split the source and corrupt only the training labels; returns (train, val, test, ledger)."""
    ds = load_source(cfg) if source is None else source
    if ds.clean_labels is None:
        ds = ds.with_labels(ds.labels)
    tr, va, te = split(ds, cfg.split_spec())
    noisy, ledger = inject_rns(tr.labels, rate_to_spec(rate, derive_seed(seed, 1)))
    return tr.with_labels(noisy), va, te, ledger


def run_single(cfg: ExperimentConfig, method: str, rate: float, seed: int,
               source: Optional[MultiLabelDataset] = None, on_batch=None) -> RunResult:
    """Inject noise at ``rate``, train ``method``, evaluate on clean test labels and diagnose."""
    tr, va, te, ledger = prepare_splits(cfg, rate, seed, source)
    weights, options, force_full = method_settings(method, cfg.loss_weights(), cfg.collab_options())
    sgd, kernel, lasso = cfg.sgd_config(), cfg.kernel_config(), cfg.lasso_config()
    mlp = MlpConfig((tr.n_features, *cfg.mlp.hidden, tr.n_classes), cfg.mlp.tap_layer, cfg.mlp.init_scale,
                    seed=derive_seed(seed, 2))

    estimated = None
    if force_full:
        gamma = 1.0
    elif cfg.swap.gamma is not None:
        gamma = float(cfg.swap.gamma)
    elif cfg.swap.estimate:
        estimated = estimate_noise_rate(tr, cfg.swap.candidates, cfg.swap.folds, cfg.swap.warmup_epochs,
                                        seed=derive_seed(seed, 4) % 2**32, mlp=mlp, sgd=sgd, kernel=kernel,
                                        lasso=lasso, weights=weights)
        gamma = adaptive_gamma(estimated)
    else:
        gamma = adaptive_gamma(rate)
    swap = SwapConfig(gamma=gamma)

    pair = init_pair(mlp, derive_seed(seed, 5), derive_seed(seed, 6))
    pair, report = train(pair, tr, va, sgd, kernel, lasso, swap, weights, seed=derive_seed(seed, 3),
                         options=options, on_batch=on_batch)
    best = select_best(pair, report) if report.epochs else pair.f
    _, logits = forward(best, te.features)
    test = map_scores(sigmoid(logits), te.truth, te.class_names)
    nrep = diagnose(pair, tr, lasso, cfg.top_k, ledger=ledger, gamma=gamma)
    return RunResult(method, rate, seed, gamma, estimated, test.to_dict(), nrep.detection,
                     report.selected or "f", pair, report, ledger, nrep, (tr, va, te))


# ---------------------------------------------------------------------- sweeps


AGG_COLUMNS = ("method", "noise_rate", "f1_micro", "map_micro", "map_macro", "n_seeds")


def aggregate(results: list[RunResult]) -> list[dict]:
    """Mean test metrics over seeds, one row per (method, noise rate) in config order."""
    rows, groups = [], {}
    for r in results:
        groups.setdefault((r.method, r.noise_rate), []).append(r)
    for (method, rate), runs in groups.items():
        rows.append({
            "method": method, "noise_rate": rate,
            "f1_micro": float(np.mean([r.test["f1_micro"] for r in runs])),
            "map_micro": float(np.mean([r.test["map_micro"] for r in runs])),
            "map_macro": float(np.mean([r.test["map_macro"] for r in runs])),
            "n_seeds": len(runs),
        })
    return rows


def aggregate_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_COLUMNS)
    for row in rows:
        w.writerow([row["method"], f"{row['noise_rate']:.4f}", f"{row['f1_micro']:.6f}",
                    f"{row['map_micro']:.6f}", f"{row['map_macro']:.6f}", row["n_seeds"]])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out_dir, log=None) -> list[dict]:
    """Sweep methods x noise rates x seeds; writes per-run reports and aggregate.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source = load_source(cfg)
    resolved = config_to_dict(cfg)
    results = []
    for method in cfg.methods:
        for rate in sorted(cfg.noise_rates):
            for seed in sorted(cfg.seeds):
                res = run_single(cfg, method, float(rate), seed, source)
                results.append(res)
                run_dir = out / "runs" / f"{method}_r{rate:.2f}_s{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                doc = {"config": resolved, **res.summary(), "train": res.report.to_dict()}
                (run_dir / "report.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
                (run_dir / "metrics_per_epoch.csv").write_text(res.report.epochs_csv(), encoding="utf-8")
                tr = res.splits[0]
                (run_dir / "noise_ledger.json").write_text(
                    res.ledger.to_json(tr.sample_ids, tr.class_names), encoding="utf-8")
                if log:
                    log(f"{method} rate={rate:.2f} seed={seed}: mAP macro {res.test['map_macro']:.4f}")
    rows = aggregate(results)
    (out / "aggregate.csv").write_text(aggregate_csv(rows), encoding="utf-8")
    (out / "report.json").write_text(json.dumps(
        {"config": resolved, "aggregate": rows, "runs": [r.summary() for r in results]}, indent=2),
        encoding="utf-8")
    return rows


def clone_config(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    new = copy.deepcopy(cfg)
    for k, v in changes.items():
        setattr(new, k, v)
    new.validate()
    return new
