import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcml.dataset import round_half_away
from rcml.noise import ADDED, REMOVED, NoiseError, NoiseLedger, NoiseSpec, inject_rns, rate_to_spec


def _labels(n, v, seed=0):
    return np.random.default_rng(seed).integers(0, 2, size=(n, v)).astype(np.int8)


def test_six_by_ten_half_half():
    y = _labels(6, 10)
    noisy, ledger = inject_rns(y, NoiseSpec(0.5, 0.5, seed=4))
    assert len(ledger.flips) == 15
    assert len(ledger.noisy_sample_set) == 3
    per_sample = np.sum(noisy != y, axis=1)
    assert sorted(per_sample.tolist()) == [0, 0, 0, 5, 5, 5]


def test_zero_sampling_is_identity():
    y = _labels(20, 5)
    noisy, ledger = inject_rns(y, NoiseSpec(0.0, 0.7))
    np.testing.assert_array_equal(noisy, y)
    assert ledger.flips == []


def test_full_flip_is_complement():
    y = _labels(9, 4)
    noisy, _ = inject_rns(y, NoiseSpec(1.0, 1.0))
    np.testing.assert_array_equal(noisy, 1 - y)


def test_input_not_modified():
    y = _labels(10, 6)
    before = y.copy()
    inject_rns(y, NoiseSpec(0.5, 0.5, seed=1))
    np.testing.assert_array_equal(y, before)


def test_deterministic_per_seed():
    y = _labels(50, 8)
    a, la = inject_rns(y, NoiseSpec(0.4, 0.5, seed=3))
    b, lb = inject_rns(y, NoiseSpec(0.4, 0.5, seed=3))
    np.testing.assert_array_equal(a, b)
    assert la.flips == lb.flips


def test_rejects_bad_inputs():
    with pytest.raises(NoiseError):
        inject_rns(_labels(3, 3), NoiseSpec(1.5, 0.5))
    with pytest.raises(NoiseError):
        inject_rns(np.array([[0, 2]]), NoiseSpec(0.5, 0.5))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(0, 40), v=st.integers(1, 12), s=st.floats(0, 1), c=st.floats(0, 1),
       seed=st.integers(0, 2**32))
def test_rns_properties(n, v, s, c, seed):
    y = _labels(n, v, seed % 1000)
    noisy, ledger = inject_rns(y, NoiseSpec(s, c, seed))
    n_sel, k = round_half_away(s * n), round_half_away(c * v)
    assert len(ledger.flips) == n_sel * k
    assert int(np.sum(noisy != y)) == n_sel * k
    pairs = [(f.sample_index, f.class_index) for f in ledger.flips]
    assert len(set(pairs)) == len(pairs)
    assert ledger.noisy_sample_set == {f.sample_index for f in ledger.flips}
    restored = ledger.apply(noisy)
    assert restored.tobytes() == y.tobytes()
    for f in ledger.flips:
        assert f.direction == (REMOVED if y[f.sample_index, f.class_index] == 1 else ADDED)


def test_rate_to_spec():
    assert rate_to_spec(0.25) == NoiseSpec(0.5, 0.5, 0)
    assert rate_to_spec(0.0) == NoiseSpec(0.0, 0.0, 0)
    assert rate_to_spec(0.5) == NoiseSpec(1.0, 0.5, 0)
    with pytest.raises(NoiseError):
        rate_to_spec(0.6)


@pytest.mark.parametrize("r", [0.1, 0.2, 0.3, 0.4, 0.5])
def test_rate_to_spec_effective_rate(r):
    assert rate_to_spec(r).effective_rate == pytest.approx(r, abs=1e-12)


def test_ledger_json_round_trip():
    y = _labels(8, 4)
    ids = [f"s{i}" for i in range(8)]
    names = list("abcd")
    _, ledger = inject_rns(y, NoiseSpec(0.5, 0.5, seed=2))
    back = NoiseLedger.from_json(ledger.to_json(ids, names), ids, names)
    assert back.flips == ledger.flips
    assert back.spec == ledger.spec
    with pytest.raises(NoiseError):
        NoiseLedger.from_json(ledger.to_json(ids, names), ids[:1], names)


def test_counts():
    y = np.array([[1, 0], [0, 0]])
    noisy, ledger = inject_rns(y, NoiseSpec(1.0, 1.0))
    assert ledger.counts() == {"flips": 4, "added": 3, "removed": 1, "noisy_samples": 2}
