import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmmlimits import rng
from hmmlimits.errors import DimensionMismatch, NegativeEntry, NonStochastic, NotPrimitive
from hmmlimits.markov_core import (CHUNK, PathStream, _simulate, check_primitive, entropy_rate, lambda2,
                                   simulate_chain, stationary, stationary_power, validate_kernel)

from conftest import kernel_from_support


def test_validate_examples():
    assert validate_kernel([[0.9, 0.1], [0.2, 0.8]]).n_states == 2
    validate_kernel([[1, 0], [0, 1]])
    with pytest.raises(NonStochastic):
        validate_kernel([[0.5, 0.6], [0.2, 0.8]])
    with pytest.raises(NegativeEntry):
        validate_kernel([[1.1, -0.1], [0.2, 0.8]])
    with pytest.raises(DimensionMismatch):
        validate_kernel([[0.5, 0.5]])
    with pytest.raises(DimensionMismatch):
        validate_kernel([[1.0]])


def test_validated_kernel_is_immutable_and_exact():
    m = validate_kernel([[0.9, 0.1 + 5e-10], [0.2, 0.8]])
    assert np.max(np.abs(m.rows.sum(axis=1) - 1)) <= 1e-12
    with pytest.raises(ValueError):
        m.rows[0, 0] = 0.5


def test_primitive_examples():
    info = check_primitive(validate_kernel([[0.9, 0.1], [0.2, 0.8]]))
    assert info.primitivity_exponent == 1
    assert info.lambda2_modulus == pytest.approx(0.7, abs=1e-12)
    for bad in ([[1, 0], [0, 1]], [[0, 1], [1, 0]]):
        with pytest.raises(NotPrimitive):
            check_primitive(validate_kernel(bad))


def test_primitivity_exponent_is_smallest():
    # Wielandt's extremal pattern: exponent (n-1)^2 + 1 = 5
    d = np.array([[0, 1, 0], [0, 0, 1], [0.5, 0.5, 0]], float)
    info = check_primitive(validate_kernel(d))
    assert info.primitivity_exponent == 5
    assert np.all(np.linalg.matrix_power(d, 5) > 0)
    assert not np.all(np.linalg.matrix_power(d, 4) > 0)


def _oracle_primitive(support: np.ndarray) -> bool:
    """Strong connectivity plus period 1 (gcd of level differences along edges)."""
    n = support.shape[0]
    for s in range(n):
        seen, stack = {s}, [s]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(support[u]):
                if v not in seen:
                    seen.add(int(v))
                    stack.append(int(v))
        if len(seen) < n:
            return False
    level = {0: 0}
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v in np.flatnonzero(support[u]):
            if int(v) not in level:
                level[int(v)] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u in range(n):
        for v in np.flatnonzero(support[u]):
            g = math.gcd(g, level[u] + 1 - level[int(v)])
    return g == 1


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.lists(st.booleans(), min_size=n * n, max_size=n * n)
                                 .map(lambda b: np.array(b).reshape(n, n))),
       st.integers(0, 2**32 - 1))
def test_primitivity_matches_graph_oracle(support, seed):
    support = support.astype(float)
    support[support.sum(axis=1) == 0, 0] = 1.0
    d = kernel_from_support(support, np.random.default_rng(seed))
    expected = _oracle_primitive(support > 0)
    try:
        check_primitive(validate_kernel(d))
        got = True
    except NotPrimitive:
        got = False
    assert got == expected


def test_stationary_examples():
    pi = stationary(validate_kernel([[0.9, 0.1], [0.2, 0.8]])).probs
    np.testing.assert_allclose(pi, [2 / 3, 1 / 3], atol=1e-14)
    np.testing.assert_allclose(stationary(validate_kernel(np.full((4, 4), 0.25))).probs, 0.25, atol=1e-14)
    np.testing.assert_allclose(stationary(validate_kernel([[0.7, 0.3], [0.3, 0.7]])).probs, 0.5, atol=1e-14)
    with pytest.raises(NotPrimitive):
        stationary(validate_kernel([[0, 1], [1, 0]]))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_stationary_balance_and_power_iteration(n, seed):
    g = np.random.default_rng(seed)
    m = validate_kernel(kernel_from_support(np.ones((n, n)), g))
    pi = stationary(m).probs
    assert np.all(pi >= 0)
    assert abs(pi.sum() - 1) <= 1e-12
    assert np.max(np.abs(pi @ m.rows - pi)) <= 1e-10
    np.testing.assert_allclose(stationary_power(m).probs, pi, atol=1e-8)


def test_lambda2_controls_convergence():
    g = np.random.default_rng(3)
    kernels = [[[0.9, 0.1], [0.2, 0.8]], [[0.7, 0.3], [0.3, 0.7]], [[0.5, 0.5], [0.5, 0.5]],
               [[0.5, 0.5, 0], [0, 0, 1], [1, 0, 0]]]
    kernels += [kernel_from_support(np.ones((k, k)), g) for k in (2, 3, 4, 5)]
    for d in kernels:
        m = validate_kernel(d)
        lam = lambda2(m)
        assert lam < 1
        pi = stationary(m).probs
        x = np.zeros(m.n_states)
        x[0] = 1
        errs = []
        for n in range(1, 61):
            x = x @ m.rows
            errs.append(np.max(np.abs(x - pi)))
        c = max((e / (lam + 0.01) ** n for n, e in enumerate(errs, 1) if e > 1e-13), default=0.0)
        assert np.isfinite(c) and c < 1e3


def test_entropy_rate_closed_form():
    d = np.array([[0.9, 0.1], [0.2, 0.8]])
    pi = np.array([2 / 3, 1 / 3])
    h = -sum(pi[i] * d[i, j] * math.log(d[i, j]) for i in range(2) for j in range(2))
    assert entropy_rate(validate_kernel(d)) == pytest.approx(h, abs=1e-14)
    assert entropy_rate(validate_kernel([[0, 1], [0.5, 0.5]])) == pytest.approx(2 * math.log(2) / 3, abs=1e-14)


def test_simulation_determinism_and_first_state():
    m = validate_kernel([[0.9, 0.1], [0.2, 0.8]])
    pi = stationary(m)
    a = simulate_chain(m, pi, 1000, 42)
    np.testing.assert_array_equal(a, simulate_chain(m, pi, 1000, 42))
    assert not np.array_equal(a, simulate_chain(m, pi, 1000, 43))
    firsts = np.array([simulate_chain(m, pi, 1, rng.stream(7, rng.SIMULATE, r))[0] for r in range(20000)])
    counts = np.bincount(firsts, minlength=2)
    chi2 = np.sum((counts - 20000 * pi.probs) ** 2 / (20000 * pi.probs))
    assert chi2 < 10.8  # 0.1% point of chi-square(1)


def test_transition_frequencies():
    d = np.array([[0.9, 0.1], [0.2, 0.8]])
    m = validate_kernel(d)
    y = simulate_chain(m, stationary(m), 1_000_000, 5)
    for i in range(2):
        nxt = y[1:][y[:-1] == i]
        p = np.mean(nxt == 1)
        se = math.sqrt(d[i, 1] * d[i, 0] / nxt.size)
        assert abs(p - d[i, 1]) <= 4 * se


def test_path_stream_continues_one_path():
    m = validate_kernel([[0.6, 0.4], [0.1, 0.9]])
    pi = stationary(m).probs
    emit = np.array([[0.8, 0.2], [0.3, 0.7]])
    full = _simulate(m.rows, pi, emit, 5000, rng.stream(9))
    ps = PathStream(m.rows, pi, emit, rng.stream(9))
    parts = [ps.next(1234), ps.next(3766)]
    np.testing.assert_array_equal(np.concatenate([p[0] for p in parts]), full[0])
    np.testing.assert_array_equal(np.concatenate([p[1] for p in parts]), full[1])
    assert CHUNK > 5000


def test_simulation_rejects_empty():
    m = validate_kernel([[0.6, 0.4], [0.1, 0.9]])
    with pytest.raises(ValueError):
        simulate_chain(m, stationary(m), 0, 1)
