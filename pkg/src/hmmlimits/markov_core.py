"""Finite-state Markov kernels: validation, stationary law, spectrum, simulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, rng
from .errors import DimensionMismatch, NegativeEntry, NonStochastic, NotPrimitive

ROW_SUM_TOL = 1e-9
CHUNK = 1 << 20


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """A validated row-stochastic matrix. Build it with :func:`validate_kernel`."""

    rows: np.ndarray

    @property
    def n_states(self) -> int:
        return self.rows.shape[0]

    def to_json(self) -> list:
        return self.rows.tolist()


@dataclass(frozen=True, eq=False)
class StationaryVector:
    probs: np.ndarray


@dataclass(frozen=True)
class SpectralInfo:
    lambda2_modulus: float
    primitivity_exponent: int


def validate_kernel(rows) -> StochasticMatrix:
    """Check a raw square matrix and return it as a :class:`StochasticMatrix`.

    Rows within ``1e-9`` of unit mass are accepted and renormalized so the
    stored kernel is stochastic to machine precision.
    """
    a = np.asarray(rows, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"kernel must be square, got shape {a.shape}")
    if a.shape[0] < 2:
        raise DimensionMismatch("kernel needs at least 2 states")
    if not np.all(np.isfinite(a)):
        raise NonStochastic("kernel has non-finite entries")
    if np.any(a < 0):
        i, j = np.argwhere(a < 0)[0]
        raise NegativeEntry(f"entry ({i}, {j}) = {float(a[i, j])!r} is negative")
    sums = a.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonStochastic(f"row {i} sums to {float(sums[i])!r}")
    if np.any(a > 1):
        raise NonStochastic("entries must not exceed 1")
    return StochasticMatrix(_frozen(a / sums[:, None]))


def lambda2(m: StochasticMatrix) -> float:
    """Second largest eigenvalue modulus."""
    ev = np.sort(np.abs(np.linalg.eigvals(m.rows)))[::-1]
    return float(ev[1])


def primitivity_exponent(m: StochasticMatrix) -> int:
    """Smallest k within the Wielandt bound ``(n-1)² + 1`` with ``Δ^k > 0``."""
    n = m.n_states
    support = (m.rows > 0).astype(np.int64)
    power = support.copy()
    for k in range(1, (n - 1) ** 2 + 2):
        if np.all(power > 0):
            return k
        power = np.minimum(power @ support, 1)
    raise NotPrimitive("kernel is not irreducible and aperiodic")


def check_primitive(m: StochasticMatrix) -> SpectralInfo:
    k = primitivity_exponent(m)
    return SpectralInfo(lambda2(m), k)


def stationary(m: StochasticMatrix) -> StationaryVector:
    """Stationary law via the balance equations with one row replaced by Σπ = 1."""
    primitivity_exponent(m)
    n = m.n_states
    a = (np.eye(n) - m.rows).T
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    return StationaryVector(_frozen(pi / pi.sum()))


def stationary_power(m: StochasticMatrix, tol: float = 1e-14, max_iter: int = 100_000) -> StationaryVector:
    """Power-iteration stationary law, used as an independent cross-check."""
    primitivity_exponent(m)
    x = np.full(m.n_states, 1.0 / m.n_states)
    for _ in range(max_iter):
        nxt = x @ m.rows
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - x)) < tol:
            return StationaryVector(_frozen(nxt))
        x = nxt
    return StationaryVector(_frozen(x))


def entropy_rate(m: StochasticMatrix, pi: StationaryVector | None = None) -> float:
    """Closed-form entropy rate ``-Σ π_i Δ_ij log Δ_ij`` of the chain (nats)."""
    if pi is None:
        pi = stationary(m)
    d = m.rows
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(d > 0, d * np.log(d), 0.0)
    return float(-(pi.probs @ terms.sum(axis=1)))


def cumulative(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return np.ascontiguousarray(c)


def simulate_chain(m: StochasticMatrix, pi: StationaryVector, length: int, seed: int | np.random.Generator) -> np.ndarray:
    """Stationary path ``Y_1..Y_length``; identical seeds give identical paths."""
    states, _ = _simulate(m.rows, pi.probs, np.ones((m.n_states, 1)), length, seed)
    return states


def _simulate(delta, pi, emit, length, seed):
    if length < 1:
        raise ValueError("length must be >= 1")
    gen = seed if isinstance(seed, np.random.Generator) else rng.stream(int(seed))
    cum_pi = cumulative(np.asarray(pi, float))
    cum_d = cumulative(np.asarray(delta, float))
    cum_e = cumulative(np.asarray(emit, float))
    states = np.empty(length, dtype=np.int64)
    symbols = np.empty(length, dtype=np.int64)
    prev = -1
    for a, b in rng.chunked(length, CHUNK):
        u = gen.random((b - a, 2))
        prev = _kernels.simulate_path(cum_pi, cum_d, cum_e, u, prev, states[a:b], symbols[a:b])
    return states, symbols


class PathStream:
    """Chunked continuation of one stationary path (for very long runs)."""

    def __init__(self, delta, pi, emit, gen: np.random.Generator):
        self.cum_pi = cumulative(np.asarray(pi, float))
        self.cum_d = cumulative(np.asarray(delta, float))
        self.cum_e = cumulative(np.asarray(emit, float))
        self.gen = gen
        self.prev = -1

    def next(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        states = np.empty(k, dtype=np.int64)
        symbols = np.empty(k, dtype=np.int64)
        u = self.gen.random((k, 2))
        self.prev = _kernels.simulate_path(self.cum_pi, self.cum_d, self.cum_e, u, self.prev, states, symbols)
        return states, symbols
