"""The observed chain Z: channel, symbol matrices, exact laws and forward filtering."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import fitting, rng
from .errors import DimensionMismatch, NonStochastic, SymbolOutOfRange, ZeroChannelEntry
from .markov_core import (ROW_SUM_TOL, StationaryVector, StochasticMatrix, _frozen, _simulate,
                          primitivity_exponent, stationary, validate_kernel)


@dataclass(frozen=True, eq=False)
class EmissionChannel:
    """Memoryless channel; ``emit[j, z] = p(z | j)``."""

    emit: np.ndarray

    @property
    def n_states(self) -> int:
        return self.emit.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emit.shape[1]


def validate_channel(emit) -> EmissionChannel:
    e = np.asarray(emit, dtype=float)
    if e.ndim != 2 or e.shape[1] < 1:
        raise DimensionMismatch(f"channel must be a matrix, got shape {e.shape}")
    if np.any(e <= 0):
        i, z = np.argwhere(e <= 0)[0]
        raise ZeroChannelEntry(f"p({z}|{i}) = {e[i, z]!r}; channel entries must be strictly positive")
    sums = e.sum(axis=1)
    if np.any(np.abs(sums - 1) > ROW_SUM_TOL):
        raise NonStochastic(f"channel rows sum to {sums.tolist()}")
    return EmissionChannel(_frozen(e / sums[:, None]))


def bsc(eps: float) -> EmissionChannel:
    """Binary symmetric channel with crossover probability ``eps``."""
    return validate_channel([[1 - eps, eps], [eps, 1 - eps]])


def smoothed_identity(n: int, eps: float) -> EmissionChannel:
    """Identity channel with ``eps`` mass spread evenly over wrong symbols."""
    e = np.full((n, n), eps / (n - 1))
    np.fill_diagonal(e, 1 - eps)
    return validate_channel(e)


@dataclass(frozen=True, eq=False)
class HmmSpec:
    kernel: StochasticMatrix
    channel: EmissionChannel
    pi: StationaryVector
    symbol_mats: np.ndarray  # (n_symbols, n_states, n_states)

    @property
    def n_states(self) -> int:
        return self.kernel.n_states

    @property
    def n_symbols(self) -> int:
        return self.channel.n_symbols

    def to_json(self) -> dict:
        return {"delta": self.kernel.rows.tolist(), "emit": self.channel.emit.tolist()}


def build_hmm(kernel, channel) -> HmmSpec:
    if not isinstance(kernel, StochasticMatrix):
        kernel = validate_kernel(kernel)
    if not isinstance(channel, EmissionChannel):
        channel = validate_channel(channel)
    if channel.n_states != kernel.n_states:
        raise DimensionMismatch(f"kernel has {kernel.n_states} states, channel {channel.n_states}")
    primitivity_exponent(kernel)
    mats = kernel.rows[None, :, :] * channel.emit.T[:, None, :]
    if np.max(np.abs(mats.sum(axis=0) - kernel.rows)) > 1e-12:
        raise NonStochastic("symbol matrices do not sum to the kernel")
    return HmmSpec(kernel, channel, stationary(kernel), _frozen(mats))


def load_model(obj: dict) -> HmmSpec:
    """Model from its JSON form ``{"delta": [[...]], "emit": [[...]]}``."""
    try:
        return build_hmm(obj["delta"], obj["emit"])
    except KeyError as exc:
        raise DimensionMismatch(f"model JSON lacks field {exc}") from None


def _check_symbols(h: HmmSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    if z.size and (z.min() < 0 or z.max() >= h.n_symbols):
        raise SymbolOutOfRange(f"symbols must lie in [0, {h.n_symbols})")
    return z


def sequence_log_probs(h: HmmSpec, seqs) -> np.ndarray:
    """``log p(z_1^n)`` for each row of ``seqs`` (batched, normalized forward pass)."""
    seqs = _check_symbols(h, np.atleast_2d(seqs))
    if seqs.shape[1] == 0:
        raise ValueError("sequences must be nonempty")
    v = np.broadcast_to(h.pi.probs, (seqs.shape[0], h.n_states)).copy()
    logp = np.zeros(seqs.shape[0])
    for t in range(seqs.shape[1]):
        u = np.einsum("bi,bij->bj", v, h.symbol_mats[seqs[:, t]])
        c = u.sum(axis=1)
        logp += np.log(c)
        v = u / c[:, None]
    return logp


def exact_sequence_prob(h: HmmSpec, z_seq, log: bool = False) -> float:
    """``π Δ_{z_1} ... Δ_{z_n} 1``, accumulated in log space."""
    lp = float(sequence_log_probs(h, np.asarray(z_seq)[None, :])[0])
    return lp if log else float(np.exp(lp))


def all_sequences(n_symbols: int, n: int) -> np.ndarray:
    """Every word of length ``n`` in lexicographic order, shape ``(n_symbols**n, n)``."""
    return np.array(list(itertools.product(range(n_symbols), repeat=n)), dtype=np.int64).reshape(-1, n)


@dataclass(frozen=True, eq=False)
class ForwardFilter:
    normalized_vec: np.ndarray
    log_scale: float
    t: int


def initial_filter(h: HmmSpec) -> ForwardFilter:
    return ForwardFilter(h.pi.probs.copy(), 0.0, 0)


def forward_step(f: ForwardFilter, h: HmmSpec, z: int) -> tuple[ForwardFilter, float]:
    """One filtering step; returns the new filter and ``p(z_t | z_1^{t-1})``."""
    if not 0 <= z < h.n_symbols:
        raise SymbolOutOfRange(f"symbol {z} outside alphabet")
    u = f.normalized_vec @ h.symbol_mats[z]
    c = float(u.sum())
    return ForwardFilter(u / c, f.log_scale + np.log(c), f.t + 1), c


def cond_prob_bounds(h: HmmSpec) -> tuple[float, float]:
    """Bounds ``C' ≤ p(z_t | past) ≤ C''`` valid for every history.

    The conditional probability is a convex combination of the row masses
    ``(Δ_z 1)_i`` so their extremes bound it.
    """
    masses = h.symbol_mats.sum(axis=2)
    return float(masses.min()), float(masses.max())


def simulate_hmm(h: HmmSpec, length: int, seed: int | np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stationary ``(state path, symbol path)`` of the given length."""
    return _simulate(h.kernel.rows, h.pi.probs, h.channel.emit, length, seed)


def last_cond_probs(h: HmmSpec, seqs: np.ndarray) -> np.ndarray:
    """``p(z_last | earlier symbols)`` for each row, filtering from the stationary law."""
    v = np.broadcast_to(h.pi.probs, (seqs.shape[0], h.n_states)).copy()
    c = None
    for t in range(seqs.shape[1]):
        u = np.einsum("bi,bij->bj", v, h.symbol_mats[seqs[:, t]])
        c = u.sum(axis=1)
        v = u / c[:, None]
    return c


def history_pairs(h: HmmSpec, window: int, samples: int, seed: int, prefix_len: int = 30):
    """Pairs of symbol histories that agree on their last ``window + 1`` symbols.

    The shared suffix and the first history's prefix come from one stationary
    path; the second prefix is an independent stationary path.
    """
    gen = rng.stream(seed, rng.HISTORY, window)
    a = np.empty((samples, prefix_len + window + 1), dtype=np.int64)
    b = np.empty_like(a)
    for k in range(samples):
        _, za = simulate_hmm(h, prefix_len + window + 1, gen)
        _, zb = simulate_hmm(h, prefix_len, gen)
        a[k] = za
        b[k, :prefix_len] = zb
        b[k, prefix_len:] = za[prefix_len:]
    return a, b


@dataclass(frozen=True)
class TailGapResult:
    windows: np.ndarray
    gaps: np.ndarray
    C: float
    rho: float
    degenerate: bool

    def gap(self, window: int) -> float:
        return float(self.gaps[list(self.windows).index(window)])

    def to_dict(self) -> dict:
        return {"windows": self.windows.tolist(), "gaps": self.gaps.tolist(), "C": self.C,
                "rho": self.rho, "degenerate": self.degenerate}


def conditional_tail_gap(h: HmmSpec, window: int, samples: int = 200, seed: int = 0,
                         prefix_len: int = 30, log: bool = False) -> TailGapResult:
    """Measure ``max |f(z0|history) - f(z0|other history)|`` for windows ``1..window``.

    Histories agree on the last ``w + 1`` symbols. The gaps are fitted as
    ``C ρ^w``; gaps under 1e-14 are dropped from the fit and flagged.
    ``log=True`` measures the gap between log conditional probabilities.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    ws = np.arange(1, window + 1)
    gaps = np.empty(window)
    for k, w in enumerate(ws):
        a, b = history_pairs(h, int(w), samples, seed, prefix_len)
        fa, fb = last_cond_probs(h, a), last_cond_probs(h, b)
        if log:
            fa, fb = np.log(fa), np.log(fb)
        gaps[k] = np.max(np.abs(fa - fb))
    c, rho, degenerate = fitting.fit_exponential(ws, gaps)
    return TailGapResult(ws, gaps, c, rho, degenerate)
