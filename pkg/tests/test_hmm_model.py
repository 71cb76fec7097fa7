import itertools

import numpy as np
import pytest

from hmmlimits import deriv_engine as de
from hmmlimits import hmm_model as hm
from hmmlimits import rng
from hmmlimits.errors import DimensionMismatch, SymbolOutOfRange, ZeroChannelEntry
from hmmlimits.markov_core import lambda2


def _direct_prob(h, z):
    """Unnormalized product π Δ_{z_1} ... Δ_{z_n} 1 (fine for short words)."""
    v = h.pi.probs.copy()
    for s in z:
        v = v @ h.symbol_mats[s]
    return float(v.sum())


@pytest.fixture(scope="module")
def ternary():
    d = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]])
    e = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])
    return hm.build_hmm(d, e)


def test_build_examples(canonical):
    assert canonical.symbol_mats.shape == (2, 2, 2)
    np.testing.assert_allclose(canonical.symbol_mats.sum(axis=0), canonical.kernel.rows, atol=1e-12)
    with pytest.raises(ZeroChannelEntry):
        hm.build_hmm([[0.7, 0.3], [0.3, 0.7]], [[1.0, 0.0], [0.1, 0.9]])
    with pytest.raises(DimensionMismatch):
        hm.build_hmm([[0.7, 0.3], [0.3, 0.7]], [[0.5, 0.5]])
    h = hm.build_hmm([[0.7, 0.3], [0.3, 0.7]], [[0.99, 0.01], [0.01, 0.99]])
    assert np.all(h.symbol_mats > 0)


def test_load_model_json():
    h = hm.load_model({"delta": [[0.7, 0.3], [0.3, 0.7]], "emit": [[0.9, 0.1], [0.1, 0.9]]})
    assert h.to_json()["delta"] == [[0.7, 0.3], [0.3, 0.7]]
    with pytest.raises(DimensionMismatch):
        hm.load_model({"delta": [[0.7, 0.3], [0.3, 0.7]]})


@pytest.mark.parametrize("n", range(1, 13))
def test_normalization_binary(canonical, n):
    seqs = hm.all_sequences(2, n)
    assert abs(np.exp(hm.sequence_log_probs(canonical, seqs)).sum() - 1) <= 1e-12


@pytest.mark.parametrize("n", [1, 4, 8, 12])
def test_normalization_ternary(ternary, n):
    seqs = hm.all_sequences(3, n)
    total = 0.0
    for chunk in np.array_split(seqs, max(1, seqs.shape[0] // 100_000)):
        total += np.exp(hm.sequence_log_probs(ternary, chunk)).sum()
    assert abs(total - 1) <= 1e-12


def test_one_step_marginal(ternary):
    for z in range(3):
        expected = ternary.pi.probs @ ternary.channel.emit[:, z]
        assert hm.exact_sequence_prob(ternary, [z]) == pytest.approx(expected, abs=1e-15)


def test_log_space_matches_direct_product(ternary):
    for z in itertools.product(range(3), repeat=5):
        assert hm.exact_sequence_prob(ternary, z) == pytest.approx(_direct_prob(ternary, z), rel=1e-12)
    assert hm.exact_sequence_prob(ternary, [0, 1], log=True) == pytest.approx(np.log(_direct_prob(ternary, [0, 1])))


def test_symbol_range(canonical):
    with pytest.raises(SymbolOutOfRange):
        hm.exact_sequence_prob(canonical, [0, 2])
    with pytest.raises(SymbolOutOfRange):
        hm.forward_step(hm.initial_filter(canonical), canonical, -1)


@pytest.mark.parametrize("n", range(1, 9))
def test_shift_invariance(ternary, n):
    seqs = hm.all_sequences(3, n)
    p = np.exp(hm.sequence_log_probs(ternary, seqs))
    longer = np.exp(hm.sequence_log_probs(ternary, hm.all_sequences(3, n + 1)))
    shifted = longer.reshape(3, -1).sum(axis=0)  # marginalize Z_1: law of Z_2..Z_{n+1}
    np.testing.assert_allclose(shifted, p, rtol=1e-12, atol=0)


def test_chain_rule_and_filter_invariants(ternary):
    g = np.random.default_rng(0)
    for _ in range(20):
        z = g.integers(0, 3, g.integers(1, 13))
        f = hm.initial_filter(ternary)
        logs = 0.0
        for s in z:
            f, c = hm.forward_step(f, ternary, int(s))
            logs += np.log(c)
            assert abs(f.normalized_vec.sum() - 1) <= 1e-12
            assert np.all(f.normalized_vec >= 0)
        assert abs(logs - hm.exact_sequence_prob(ternary, z, log=True)) <= 1e-10
        assert np.exp(f.log_scale) == pytest.approx(_direct_prob(ternary, z), rel=1e-9)
        assert f.t == len(z)


def test_iid_construction_is_memoryless():
    fam = de.iid_family(0.3)
    h = hm.build_hmm(fam.kernel_at(0.3), hm.smoothed_identity(2, 0.05))
    seqs = hm.all_sequences(2, 8)
    last = hm.last_cond_probs(h, seqs)
    for z in (0, 1):
        vals = last[seqs[:, -1] == z]
        assert np.ptp(vals) <= 1e-12


def test_cond_prob_bounds_hold_on_enumerated_histories(ternary, canonical):
    for h in (ternary, canonical):
        lo, hi = hm.cond_prob_bounds(h)
        assert lo > 0
        for n in range(1, 11 if h.n_symbols == 2 else 8):
            c = hm.last_cond_probs(h, hm.all_sequences(h.n_symbols, n))
            assert c.min() >= lo - 1e-15
            assert c.max() <= hi + 1e-15


def test_simulation_determinism(canonical):
    a = hm.simulate_hmm(canonical, 500, 11)
    b = hm.simulate_hmm(canonical, 500, 11)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_simulated_frequencies(ternary):
    z = hm.simulate_hmm(ternary, 10_000_000, rng.stream(4))[1]
    # spaced samples are effectively independent (|λ₂|^10 is negligible)
    uni = z[::10]
    p = ternary.pi.probs @ ternary.channel.emit
    freq = np.bincount(uni, minlength=3) / uni.size
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / uni.size))
    starts = np.arange(0, z.size - 3, 10)
    for k in (2, 3):
        words = sum(z[starts + i] * 3 ** (k - 1 - i) for i in range(k))
        freq = np.bincount(words, minlength=3**k) / starts.size
        exact = np.exp(hm.sequence_log_probs(ternary, hm.all_sequences(3, k)))
        assert np.all(np.abs(freq - exact) <= 4 * np.sqrt(exact * (1 - exact) / starts.size))


def test_conditional_gap_decays(canonical):
    res = hm.conditional_tail_gap(canonical, 20, samples=200, seed=1)
    assert res.gap(20) <= res.gap(5)
    assert res.gap(5) >= 10 * res.gap(20)
    assert res.rho < 1
    assert res.rho <= lambda2(canonical.kernel) + 0.1
    assert res.to_dict()["windows"][0] == 1


def test_conditional_gap_iid_is_zero():
    fam = de.iid_family(0.3)
    h = hm.build_hmm(fam.kernel_at(0.3), hm.bsc(0.2))
    res = hm.conditional_tail_gap(h, 6, samples=50, seed=1)
    assert np.all(res.gaps <= 1e-15)
    assert res.degenerate


def test_history_pairs_share_suffix(canonical):
    a, b = hm.history_pairs(canonical, 7, 20, seed=3, prefix_len=30)
    np.testing.assert_array_equal(a[:, -8:], b[:, -8:])
    assert not np.array_equal(a[:, :30], b[:, :30])
