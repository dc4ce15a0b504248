import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import assert_grad_close, central_diff
from rcml.nn import (Gradients, MlpConfig, Network, NetworkError, SgdConfig, backward, bce_loss,
                     forward, forward_cached, init_network, init_pair, load_checkpoint, save_checkpoint,
                     sgd_step, sigmoid)


def _clear_of_kinks(net, X, margin=1e-3):
    _, _, cache = forward_cached(net, X)
    return all(np.min(np.abs(z)) > margin for z in cache.pre[:-1])


def test_tap_defaults_to_last_hidden():
    assert MlpConfig((2, 4, 5, 3)).tap_layer == 2
    with pytest.raises(NetworkError):
        MlpConfig((2, 4, 3), tap_layer=2)
    with pytest.raises(NetworkError):
        MlpConfig((2, 3))


def test_init_pair_deterministic_and_distinct():
    cfg = MlpConfig((3, 5, 2))
    a, b = init_pair(cfg, 1, 2), init_pair(cfg, 1, 2)
    assert a.equals(b)
    assert not np.array_equal(a.f.flat(), a.g.flat())
    with pytest.raises(NetworkError):
        init_pair(cfg, 3, 3)


def test_zero_init_scale():
    net = init_network(MlpConfig((3, 5, 2), init_scale=0.0), 0)
    assert not net.flat().any()
    _, logits = forward(net, np.ones((4, 3)))
    assert not logits.any()
    np.testing.assert_array_equal(sigmoid(logits), 0.5)


def test_one_unit_forward():
    net = Network(MlpConfig((1, 1, 1)), (np.array([[1.0]]), np.array([[2.0]])), (np.zeros(1), np.zeros(1)))
    tap, logit = forward(net, np.array([[3.0]]))
    assert tap.tolist() == [[3.0]] and logit.tolist() == [[6.0]]


def test_forward_shapes():
    net = init_network(MlpConfig((3, 7, 4)), 0)
    tap, logits = forward(net, np.zeros((11, 3)))
    assert tap.shape == (11, 7) and logits.shape == (11, 4)
    with pytest.raises(NetworkError):
        forward(net, np.zeros((2, 4)))


def test_network_is_immutable():
    net = init_network(MlpConfig((2, 3, 2)), 0)
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 5.0


def test_bce_values():
    loss, _ = bce_loss(np.zeros((3, 2)), np.array([[1, 0], [0, 1], [1, 1]]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    z = math.log(0.8 / 0.2)
    loss, _ = bce_loss(np.array([[z]]), np.array([[1]]))
    assert loss == pytest.approx(-math.log(0.8), abs=1e-12)
    loss, grad = bce_loss(np.array([[50.0, -50.0]]), np.array([[1, 0]]))
    assert loss <= -math.log(1 - 1e-7) + 1e-15
    assert not grad.any()


def test_bce_selection_masking():
    rng = np.random.default_rng(0)
    z, y = rng.normal(size=(6, 3)), rng.integers(0, 2, size=(6, 3))
    full, gfull = bce_loss(z, y)
    all_rows, gall = bce_loss(z, y, selected=range(6))
    assert full == all_rows
    np.testing.assert_array_equal(gfull, gall)
    _, g = bce_loss(z, y, selected=[0, 2, 5])
    assert not g[[1, 3, 4]].any()
    _, g2 = bce_loss(z, y, selected=[0, 5])
    # dropping a row rescales the mean but never changes which entries are live
    np.testing.assert_allclose(g2[[0, 5]] * 2, g[[0, 5]] * 3, rtol=0, atol=1e-15)
    with pytest.raises(NetworkError):
        bce_loss(z, y, selected=[])


def test_sgd_examples():
    cfg = SgdConfig()
    assert cfg.lr(2) == pytest.approx(8.1e-4, rel=1e-12)
    net = Network(MlpConfig((1, 1, 1)), (np.array([[1.0]]), np.array([[0.0]])), (np.zeros(1), np.zeros(1)))
    step = sgd_step(net, Gradients([np.array([[2.0]]), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)]), 0,
                    SgdConfig(initial_lr=0.1))
    assert step.weights[0][0, 0] == pytest.approx(0.8)
    zero = Gradients([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    assert sgd_step(net, zero, 3, cfg).equals(net)


def test_sgd_rejects_nonfinite():
    net = init_network(MlpConfig((1, 2, 1)), 0)
    bad = Gradients([np.full_like(w, np.nan) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    with pytest.raises(NetworkError):
        sgd_step(net, bad, 0, SgdConfig())


@settings(max_examples=50, deadline=None)
@given(lr=st.floats(1e-6, 10), decay=st.floats(0.01, 0.999), e=st.integers(0, 200))
def test_lr_monotone(lr, decay, e):
    cfg = SgdConfig(initial_lr=lr, decay=decay)
    assert cfg.lr(e + 1) < cfg.lr(e) or cfg.lr(e) == 0.0


def _bce_of_flat(net, X, Y, selected=None):
    def fn(vec):
        _, logits = forward(net.with_flat(vec), X)
        return bce_loss(logits, Y, selected)[0]
    return fn


@pytest.mark.parametrize("seed", range(8))
def test_bce_forward_gradient(seed):
    rng = np.random.default_rng(seed)
    widths = (2, 4, 3) if seed % 2 == 0 else (3, 4, 3, 2)
    net = init_network(MlpConfig(widths, init_scale=2.0), seed)
    assert net.n_params <= 50
    X = rng.normal(size=(4, widths[0]))
    Y = rng.integers(0, 2, size=(4, widths[-1]))
    if not _clear_of_kinks(net, X):
        pytest.skip("input lands on a ReLU kink")
    selected = None if seed < 4 else [0, 3]
    _, logits, cache = forward_cached(net, X)
    _, g = bce_loss(logits, Y, selected)
    analytic = backward(net, cache, g).flat()
    numeric = central_diff(_bce_of_flat(net, X, Y, selected), net.flat())
    assert_grad_close(analytic, numeric)


def test_tap_gradient_path():
    rng = np.random.default_rng(1)
    net = init_network(MlpConfig((2, 5, 4, 3)), 1)
    X = rng.normal(size=(4, 2))
    C = rng.normal(size=(4, 4))
    assert _clear_of_kinks(net, X)

    def fn(vec):
        tap, _ = forward(net.with_flat(vec), X)
        return float(np.sum(C * tap))

    _, _, cache = forward_cached(net, X)
    analytic = backward(net, cache, np.zeros((4, 3)), grad_tap=C).flat()
    assert_grad_close(analytic, central_diff(fn, net.flat()))


def test_forward_is_pure():
    net = init_network(MlpConfig((2, 4, 3)), 0)
    before = net.flat().copy()
    _, logits = forward(net, np.ones((3, 2)))
    bce_loss(logits, np.ones((3, 3)))
    np.testing.assert_array_equal(net.flat(), before)


def test_checkpoint_round_trip(tmp_path):
    net = init_network(MlpConfig((3, 6, 2), seed=4), 4)
    save_checkpoint(net, tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json")
    assert back.equals(net)
    assert back.seed == 4
