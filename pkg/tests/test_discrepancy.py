import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import assert_grad_close, central_diff, mmd_double_loop, rbf
from rcml.discrepancy import (DiscrepancyError, KernelConfig, consistency_loss, disparity_loss,
                              median_distance, mmd_sq, rbf_kernel)

ONE = KernelConfig(sigmas=(1.0,))


def test_rbf_examples():
    assert rbf_kernel([1.0, 2.0], [1.0, 2.0], ONE) == 1.0
    assert rbf_kernel(0.0, 1.0, ONE) == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert rbf_kernel(0.0, 1.0, KernelConfig(sigmas=(1.0, 2.0))) == pytest.approx(
        rbf([0.0], [1.0], (1.0, 2.0)), abs=1e-15)
    with pytest.raises(DiscrepancyError):
        rbf_kernel([0.0], [0.0, 1.0], ONE)
    with pytest.raises(DiscrepancyError):
        KernelConfig(sigmas=(0.0,))


def test_mmd_single_pair():
    value, _, _ = mmd_sq([[0.0]], [[1.0]], ONE)
    assert value == pytest.approx(0.786939, abs=1e-6)
    assert value == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-15)


def test_mmd_symmetric():
    rng = np.random.default_rng(0)
    P, Q = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert mmd_sq(P, Q, KernelConfig())[0] == pytest.approx(mmd_sq(Q, P, KernelConfig())[0], abs=1e-14)


def test_mmd_rejects_mismatch():
    with pytest.raises(DiscrepancyError):
        mmd_sq(np.zeros((3, 2)), np.zeros((4, 2)), ONE)
    with pytest.raises(DiscrepancyError):
        mmd_sq(np.zeros((3, 2)), np.zeros((3, 1)), ONE)


@pytest.mark.parametrize("case", range(100))
def test_mmd_matches_double_loop(case):
    rng = np.random.default_rng(case)
    m, h = rng.integers(1, 17), rng.integers(1, 9)
    P = rng.normal(size=(m, h)) * rng.uniform(0.1, 3)
    Q = rng.normal(size=(m, h)) + rng.uniform(-1, 1)
    cfg = KernelConfig().resolve(P, Q) if case % 2 else KernelConfig(sigmas=tuple(rng.uniform(0.3, 3, size=3)))
    value, _, _ = mmd_sq(P, Q, cfg)
    assert abs(value - mmd_double_loop(P, Q, cfg.sigmas)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(P=arrays(np.float64, st.tuples(st.integers(1, 16), st.integers(1, 8)),
                elements=st.floats(-100, 100, allow_nan=False)))
def test_identical_batches_are_exactly_zero(P):
    assert mmd_sq(P, P.copy(), KernelConfig())[0] == 0.0
    assert disparity_loss(P, P.copy(), KernelConfig())[0] == 0.0
    assert consistency_loss(P, P.copy(), ONE)[0] == 0.0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32), m=st.integers(1, 12), h=st.integers(1, 6), scale=st.floats(1e-3, 1e3))
def test_mmd_nonnegative(seed, m, h, scale):
    rng = np.random.default_rng(seed)
    P, Q = rng.normal(size=(m, h)) * scale, rng.normal(size=(m, h)) * scale
    assert mmd_sq(P, Q, KernelConfig())[0] >= 0.0


def test_separation_monotone():
    rng = np.random.default_rng(0)
    base_p = rng.normal(size=(64, 1))
    base_q = rng.normal(size=(64, 1))
    values = [mmd_sq(base_p, base_q + delta, KernelConfig())[0] for delta in (0.5, 1.0, 2.0)]
    assert values[0] < values[1] < values[2]


def test_median_distance():
    assert median_distance(np.array([[0.0], [1.0], [3.0]])) == 2.0
    assert median_distance(np.zeros((4, 2))) == 1.0
    assert median_distance(np.zeros((1, 2))) == 1.0


@pytest.mark.parametrize("seed", range(12))
def test_mmd_gradients(seed):
    rng = np.random.default_rng(seed)
    m, h = rng.integers(1, 9), rng.integers(1, 5)
    P, Q = rng.normal(size=(m, h)), rng.normal(size=(m, h)) + 0.3
    # bandwidths are frozen at their batch value, exactly as in training
    cfg = KernelConfig().resolve(P, Q) if seed % 2 else KernelConfig(sigmas=(0.7, 1.9))
    _, gP, gQ = mmd_sq(P, Q, cfg)
    nP = central_diff(lambda v: mmd_sq(v.reshape(m, h), Q, cfg)[0], P.ravel())
    nQ = central_diff(lambda v: mmd_sq(P, v.reshape(m, h), cfg)[0], Q.ravel())
    assert_grad_close(gP, nP)
    assert_grad_close(gQ, nQ)


def test_median_heuristic_uses_pooled_batch():
    rng = np.random.default_rng(2)
    P, Q = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    auto = mmd_sq(P, Q, KernelConfig())[0]
    explicit = mmd_sq(P, Q, KernelConfig().resolve(P, Q))[0]
    assert auto == pytest.approx(explicit, abs=1e-14)
