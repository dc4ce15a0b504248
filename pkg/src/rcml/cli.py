"""Command-line entry point: ``rcml <subcommand> ...``.

Every subcommand reads and writes plain files so the steps can be chained:

    rcml gen-data --out data
    rcml inject-noise --labels data/train_labels.csv --noise-rate 0.3 --out noisy
    rcml train --features data/train_features.csv --labels noisy/labels.csv \\
               --val-features data/val_features.csv --val-labels data/val_labels.csv --noise-rate 0.3 --out run
    rcml evaluate --checkpoint run/checkpoint_f.json --features data/test_features.csv \\
               --labels data/test_labels.csv --out run/eval
    rcml diagnose --run run --features data/train_features.csv --labels noisy/labels.csv \\
               --ledger noisy/noise_ledger.json --out run/diag
    rcml experiment --config cfg.json --out sweep

Exit codes: 0 success, 2 bad configuration or arguments, 3 training
diverged, 4 input/output or data-file error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .collab import (CollabError, SwapConfig, TrainingDiverged, adaptive_gamma, diagnose, estimate_noise_rate,
                     select_best, train)
from .dataset import (DatasetError, MultiLabelDataset, generate_synthetic, load_dataset,
                      save_dataset, split, write_labels_csv)
from .evaluation import MetricError, map_scores
from .experiment import (METHODS, ConfigError, ExperimentConfig, clone_config, config_to_dict, derive_seed,
                         load_config, method_settings, reference_config, run_experiment, run_single)
from .nn import MlpConfig, NetworkError, NetworkPair, forward, init_pair, load_checkpoint, save_checkpoint, sigmoid
from .noise import NoiseError, NoiseLedger, NoiseSpec, inject_rns, rate_to_spec
from .ranking import LassoConfig, RankingError

EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 2, 3, 4

log = logging.getLogger("rcml")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else reference_config()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "method", None) is not None:
        changes["method"] = args.method
    if getattr(args, "noise_rate", None) is not None:
        changes["noise_rates"] = [args.noise_rate]
    if getattr(args, "estimate_noise_rate", False):
        changes["swap"] = replace(cfg.swap, estimate=True)
    return clone_config(cfg, **changes) if changes else cfg


# ------------------------------------------------------------------ subcommands


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    if cfg.dataset.synthetic is None:
        raise ConfigError("gen-data needs a synthetic dataset section")
    spec = cfg.synthetic_spec()
    if args.n is not None:
        spec = replace(spec, N=args.n)
    if args.data_seed is not None:
        spec = replace(spec, seed=args.data_seed)
    ds = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "features.csv", out / "labels.csv")
    for name, part in zip(("train", "val", "test"), split(ds, cfg.split_spec())):
        save_dataset(part, out / f"{name}_features.csv", out / f"{name}_labels.csv")
    log.info("wrote %d samples (%d classes) to %s", ds.n_samples, ds.n_classes, out)


def _read_labels_only(path) -> MultiLabelDataset:
    """Load a labels CSV on its own by pairing it with a placeholder feature column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise DatasetError(f"{path}: first column must be 'id'")
    ids = [r[0] for r in rows[1:]]
    try:
        labels = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64).reshape(len(ids), -1)
    except ValueError:
        raise DatasetError(f"{path}: non-binary label") from None
    return MultiLabelDataset(np.zeros((len(ids), 1)), labels, tuple(rows[0][1:]), tuple(ids))


def cmd_inject_noise(args) -> None:
    ds = _read_labels_only(args.labels)
    if args.noise_rate is not None:
        spec = rate_to_spec(args.noise_rate, args.seed or 0)
    elif args.sampling_rate is not None and args.class_rate is not None:
        spec = NoiseSpec(args.sampling_rate, args.class_rate, args.seed or 0)
    else:
        raise ConfigError("give --noise-rate or both --sampling-rate and --class-rate")
    noisy, ledger = inject_rns(ds.labels, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels_csv(out / "labels.csv", ds.sample_ids, ds.class_names, noisy)
    _write(out / "noise_ledger.json", ledger.to_json(ds.sample_ids, ds.class_names))
    log.info("flipped %d entries in %d samples", len(ledger.flips), len(ledger.noisy_sample_set))


def _train_on_files(args, cfg: ExperimentConfig, method: str, seed: int):
    tr = load_dataset(args.features, args.labels)
    va = load_dataset(args.val_features, args.val_labels) if args.val_features else None
    weights, options, force_full = method_settings(method, cfg.loss_weights(), cfg.collab_options())
    sgd, kernel, lasso = cfg.sgd_config(), cfg.kernel_config(), cfg.lasso_config()
    mlp = MlpConfig((tr.n_features, *cfg.mlp.hidden, tr.n_classes), cfg.mlp.tap_layer, cfg.mlp.init_scale,
                    seed=derive_seed(seed, 2))
    estimated = None
    if force_full:
        gamma = 1.0
    elif args.gamma is not None:
        gamma = args.gamma
    elif args.estimate_noise_rate:
        estimated = estimate_noise_rate(tr, cfg.swap.candidates, cfg.swap.folds, cfg.swap.warmup_epochs,
                                        seed=derive_seed(seed, 4) % 2**32, mlp=mlp, sgd=sgd, kernel=kernel,
                                        lasso=lasso, weights=weights)
        gamma = adaptive_gamma(estimated)
    elif args.noise_rate is not None:
        gamma = adaptive_gamma(args.noise_rate)
    else:
        gamma = 1.0
    pair = init_pair(mlp, derive_seed(seed, 5), derive_seed(seed, 6))
    pair, report = train(pair, tr, va, sgd, kernel, lasso, SwapConfig(gamma=gamma), weights,
                         seed=derive_seed(seed, 3), options=options)
    selected = None
    if va is not None and report.epochs:
        select_best(pair, report)
        selected = report.selected
    return pair, report, {"gamma": gamma, "estimated_noise_rate": estimated, "selected_network": selected}


def cmd_train(args) -> None:
    cfg = _config(args)
    method = cfg.methods[0]
    seed = cfg.seeds[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.features:
        if not args.labels:
            raise ConfigError("--features needs --labels")
        pair, report, extra = _train_on_files(args, cfg, method, seed)
    else:
        rate = cfg.noise_rates[0]
        if args.gamma is not None:
            cfg = clone_config(cfg, swap=replace(cfg.swap, gamma=args.gamma))
        res = run_single(cfg, method, rate, seed)
        pair, report = res.pair, res.report
        extra = {"noise_rate": rate, **res.summary()}
        tr = res.splits[0]
        _write(out / "noise_ledger.json", res.ledger.to_json(tr.sample_ids, tr.class_names))
    save_checkpoint(pair.f, out / "checkpoint_f.json")
    save_checkpoint(pair.g, out / "checkpoint_g.json")
    doc = {"config": config_to_dict(cfg), "method": method, "seed": seed, **extra, "train": report.to_dict()}
    _write(out / "report.json", json.dumps(doc, indent=2))
    _write(out / "metrics_per_epoch.csv", report.epochs_csv())
    log.info("trained %s for %d epochs; outputs in %s", method, len(report.epochs), out)


def cmd_evaluate(args) -> None:
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.features, args.labels)
    _, logits = forward(net, ds.features)
    rep = map_scores(sigmoid(logits), ds.truth, ds.class_names)
    out = Path(args.out)
    _write(out / "report.json", rep.to_json())
    _write(out / "metrics.csv", "\n".join(rep.csv_rows()) + "\n")
    print(f"mAP macro {rep.map_macro:.4f}  mAP micro {rep.map_micro:.4f}  F1 micro {rep.f1_micro:.4f}")


def cmd_diagnose(args) -> None:
    if args.run:
        f_path, g_path = Path(args.run) / "checkpoint_f.json", Path(args.run) / "checkpoint_g.json"
    elif args.checkpoint_f and args.checkpoint_g:
        f_path, g_path = args.checkpoint_f, args.checkpoint_g
    else:
        raise ConfigError("give --run or both --checkpoint-f and --checkpoint-g")
    pair = NetworkPair(load_checkpoint(f_path), load_checkpoint(g_path))
    ds = load_dataset(args.features, args.labels)
    ledger = None
    if args.ledger:
        ledger = NoiseLedger.from_json(Path(args.ledger).read_text(encoding="utf-8"), ds.sample_ids,
                                       ds.class_names)
    gamma = args.gamma
    if gamma is None and args.noise_rate is not None:
        gamma = adaptive_gamma(args.noise_rate)
    rep = diagnose(pair, ds, LassoConfig(args.alpha), args.top_k, ledger=ledger, gamma=gamma)
    out = Path(args.out)
    _write(out / "noise_report.json", json.dumps(rep.to_dict(ds.sample_ids, ds.class_names), indent=2))
    _write(out / "noise_report.csv", rep.to_csv(ds.sample_ids, ds.class_names))
    if rep.detection:
        d = rep.detection
        auc = "n/a" if d["roc_auc"] is None else f"{d['roc_auc']:.4f}"
        print(f"flagged {d['n_flagged']}  precision {d['precision']:.4f}  recall {d['recall']:.4f}  ROC-AUC {auc}")


def cmd_experiment(args) -> None:
    cfg = _config(args)
    rows = run_experiment(cfg, args.out, log=log.info)
    for row in rows:
        print(f"{row['method']:>14}  rate {row['noise_rate']:.2f}  mAP macro {row['map_macro']:.4f}  "
              f"mAP micro {row['map_micro']:.4f}  F1 {row['f1_micro']:.4f}")


def cmd_show_config(args) -> None:
    print(json.dumps(config_to_dict(_config(args)), indent=2))


# ----------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcml", description="Noise-robust collaborative multi-label training.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="experiment config JSON (defaults to the reference benchmark)")
        sp.add_argument("--seed", type=int, help="seed override (unsigned 64-bit)")
        return sp

    sp = common(sub.add_parser("gen-data", help="write the synthetic dataset and its splits as CSV"))
    sp.add_argument("--n", type=int, help="number of samples (overrides the config)")
    sp.add_argument("--data-seed", type=int, help="generator seed (overrides the config)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("inject-noise", help="corrupt a labels CSV and write the flip ledger"), config=False)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--noise-rate", type=float, help="single noise rate r in [0, 0.5]")
    sp.add_argument("--sampling-rate", type=float)
    sp.add_argument("--class-rate", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_inject_noise)

    sp = common(sub.add_parser("train", help="train a network pair and write checkpoints"))
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--features", help="training features CSV; omit to use the config's dataset")
    sp.add_argument("--labels", help="training labels CSV")
    sp.add_argument("--val-features")
    sp.add_argument("--val-labels")
    sp.add_argument("--noise-rate", type=float, help="known noise rate; sets gamma = 1 - rate")
    sp.add_argument("--gamma", type=float, help="fixed swap rate")
    sp.add_argument("--estimate-noise-rate", action="store_true", help="pick gamma by cross-validation")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a labelled CSV dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("diagnose", help="rank samples by label-noise suspicion and suggest fixes")
    sp.add_argument("--run", help="directory holding checkpoint_f.json and checkpoint_g.json")
    sp.add_argument("--checkpoint-f")
    sp.add_argument("--checkpoint-g")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--ledger", help="noise ledger JSON for detection precision/recall")
    sp.add_argument("--gamma", type=float, help="flag the top (1 - gamma) fraction of samples")
    sp.add_argument("--noise-rate", type=float, help="shorthand for --gamma 1-rate")
    sp.add_argument("--alpha", type=float, default=0.2)
    sp.add_argument("--top-k", type=int, default=2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_diagnose)

    sp = common(sub.add_parser("experiment", help="sweep methods x noise rates x seeds"))
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--noise-rate", type=float)
    sp.add_argument("--estimate-noise-rate", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_experiment)

    sp = common(sub.add_parser("show-config", help="print the resolved config as JSON"))
    sp.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, NoiseError, CollabError, RankingError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError, NetworkError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
