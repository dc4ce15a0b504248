import json

import numpy as np
import pytest

from rcml.collab import LossWeights, CollabOptions
from rcml.experiment import (METHODS, ConfigError, aggregate_csv, clone_config, config_from_dict, config_to_dict,
                             derive_seed, load_config, method_settings, prepare_splits, reference_config,
                             run_experiment, run_single)


def small_doc(**over):
    doc = {
        "config_version": 1,
        "dataset": {"synthetic": {"N": 150, "V": 4, "d": 5, "seed": 1}},
        "split": {"train_fraction": 0.6, "val_fraction": 0.2, "test_fraction": 0.2, "seed": 0},
        "noise_rates": [0.0, 0.2],
        "method": ["rcml", "bce_baseline"],
        "mlp": {"hidden": [8]},
        "sgd": {"initial_lr": 0.5, "decay": 0.95, "batch_size": 16, "epochs": 2},
        "seeds": [0, 1],
    }
    doc.update(over)
    return doc


def test_reference_config_is_valid():
    cfg = reference_config()
    assert cfg.synthetic_spec().N == 2000
    assert cfg.split_spec().train_fraction == 0.6
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


@pytest.mark.parametrize("bad, message", [
    ({"config_version": 2}, "config_version"),
    ({"bogus": 1}, "unknown key"),
    ({"mlp": {"hidden": [8], "depth": 3}}, "mlp: unknown key"),
    ({"sgd": {"momentum": 0.9}}, "sgd: unknown key"),
    ({"noise_rates": [0.7]}, "noise_rates"),
    ({"method": "magic"}, "unknown method"),
    ({"seeds": []}, "seeds"),
    ({"split": {"train_fraction": 0.9, "val_fraction": 0.2, "test_fraction": 0.2}}, "sum"),
])
def test_config_rejects(bad, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(small_doc(**bad))


def test_missing_version_rejected():
    doc = small_doc()
    del doc["config_version"]
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(p)


def test_derive_seed_streams():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, s) for s in range(8)}) == 8
    assert 0 <= derive_seed(2**64 - 1, 3) < 2**64


def test_method_presets():
    w, o = LossWeights(), CollabOptions()
    assert method_settings("rcml", w, o) == (w, o, False)
    bw, bo, full = method_settings("bce_baseline", w, o)
    assert (bw.lambda2, bw.lambda3, bo.swap, full) == (0.0, 0.0, False, True)
    assert method_settings("rcml_no_mmd", w, o)[0].lambda2 == 0.0
    assert method_settings("rcml_no_lasso", w, o)[1].selection == "random"
    assert method_settings("rcml_no_swap", w, o)[1].swap is False
    assert set(METHODS) == {"rcml", "bce_baseline", "rcml_no_mmd", "rcml_no_lasso", "rcml_no_swap"}


def test_noise_only_touches_training_split():
    cfg = config_from_dict(small_doc())
    tr, va, te, ledger = prepare_splits(cfg, 0.2, 0)
    assert len(ledger.flips) > 0
    assert not np.array_equal(tr.labels, tr.truth)
    np.testing.assert_array_equal(va.labels, va.truth)
    np.testing.assert_array_equal(te.labels, te.truth)
    np.testing.assert_array_equal(ledger.apply(tr.labels), tr.truth)


def test_run_single_gamma_policy():
    cfg = config_from_dict(small_doc())
    assert run_single(cfg, "rcml", 0.2, 0).gamma == 0.8
    assert run_single(cfg, "bce_baseline", 0.2, 0).gamma == 1.0
    fixed = clone_config(cfg, swap=type(cfg.swap)(gamma=0.5))
    assert run_single(fixed, "rcml", 0.2, 0).gamma == 0.5


def test_run_single_evaluates_clean_test():
    res = run_single(config_from_dict(small_doc()), "rcml", 0.2, 0)
    assert 0.0 <= res.test["map_macro"] <= 1.0
    assert res.detection["n_noisy"] == len(res.ledger.noisy_sample_set)
    assert res.selected in ("f", "g")


def test_experiment_outputs_and_determinism(tmp_path):
    cfg = config_from_dict(small_doc())
    rows = run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "aggregate.csv").read_bytes()
    assert a == (tmp_path / "b" / "aggregate.csv").read_bytes()
    assert a.decode("utf-8") == aggregate_csv(rows)
    assert [(r["method"], r["noise_rate"]) for r in rows] == [
        ("rcml", 0.0), ("rcml", 0.2), ("bce_baseline", 0.0), ("bce_baseline", 0.2)]
    run_dir = tmp_path / "a" / "runs" / "rcml_r0.20_s1"
    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    assert report["config"]["seeds"] == [0, 1] and report["seed"] == 1
    assert (run_dir / "metrics_per_epoch.csv").read_text(encoding="utf-8").startswith("epoch,lr,")
    assert json.loads((run_dir / "noise_ledger.json").read_text(encoding="utf-8"))["flips"]
    top = json.loads((tmp_path / "a" / "report.json").read_text(encoding="utf-8"))
    assert top["config"] == config_to_dict(cfg)
