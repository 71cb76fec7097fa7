"""Increment process X_i, partial sums, autocovariances and Bernstein blocks.

Here ``f(Z_i | Z_1^{i-1}) = D^l log p^θ(Z_i | Z_1^{i-1})`` with Z drawn at θ0,
``X_i`` is ``f`` minus its expectation and ``S_n`` their partial sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fitting, rng
from .deriv_engine import DerivModel, ParamFamily, batch_totals, expected_rate
from .errors import BadExponents, NegativeVarianceEstimate, TooShort
from .hmm_model import all_sequences, build_hmm, sequence_log_probs, simulate_hmm

PILOT_LEN = 1_000_000
EXACT_MAX_N = 10


class IncrementModel:
    """Model context: evaluates ``f`` at θ on symbol paths simulated at θ0."""

    def __init__(self, fam: ParamFamily, channel, theta: float | None = None, order: int = 0):
        theta = fam.theta0 if theta is None else theta
        self.fam, self.order = fam, int(order)
        self.eval = DerivModel(fam, channel, theta, order)
        self.channel = self.eval.channel
        self.theta = self.eval.theta
        self.source = build_hmm(fam.kernel_at(fam.theta0), self.channel)

    def simulate(self, length: int, gen) -> np.ndarray:
        return simulate_hmm(self.source, length, gen)[1]

    def f_values(self, z: np.ndarray) -> np.ndarray:
        return self.eval.filter().advance(z, per_step=True)[:, self.order].copy()

    def f_total(self, z: np.ndarray) -> float:
        filt = self.eval.filter()
        filt.advance(z)
        return float(filt.acc[self.order])

    def path(self, length: int, gen) -> np.ndarray:
        return self.f_values(self.simulate(length, gen))

    def checkpoint_sums(self, n_grid, reps: int, seed: int, purpose: int = rng.MAIN) -> np.ndarray:
        """Running totals of ``f`` at each grid point for ``reps`` independent paths."""
        return batch_totals(self.eval, self.source, n_grid, reps, seed, purpose)


def exact_step_means(ctx: IncrementModel, n: int) -> np.ndarray:
    """``E_θ0[f(Z_i | Z_1^{i-1})]`` for ``i = 1..n`` by full enumeration."""
    if n > EXACT_MAX_N:
        raise ValueError(f"exact centering needs n <= {EXACT_MAX_N}")
    seqs = all_sequences(ctx.source.n_symbols, n)
    w = np.exp(sequence_log_probs(ctx.source, seqs))
    f = np.stack([ctx.f_values(s) for s in seqs])
    return w @ f


def exact_sum_moments(ctx: IncrementModel, n: int) -> tuple[float, float]:
    """Exact mean and variance of ``D^l log p^θ(Z_1^n)`` under θ0 by enumeration."""
    seqs = all_sequences(ctx.source.n_symbols, n)
    w = np.exp(sequence_log_probs(ctx.source, seqs))
    tot = np.array([ctx.f_total(s) for s in seqs])
    mean = float(w @ tot)
    return mean, float(w @ (tot - mean) ** 2)


def long_run_mean(ctx: IncrementModel, seed: int, pilot_len: int = PILOT_LEN) -> tuple[float, float]:
    """Pilot estimate of the stationary mean of ``f`` and its standard error.

    Uses the predictive-expectation estimator of :func:`expected_rate` over 16
    pilot paths, which is far less noisy than averaging realized increments.
    """
    reps = 16
    est = expected_rate(ctx.fam, ctx.channel, ctx.theta, ctx.order, max(pilot_len // reps, 1000), reps,
                        seed, rng.PILOT)
    return est.value, est.stderr


@dataclass(frozen=True, eq=False)
class IncrementSeries:
    n: int
    x: np.ndarray
    centering_mode: str
    center: np.ndarray
    center_stderr: float


def build_increments(ctx: IncrementModel, n: int, seed: int, centering_mode: str = "auto",
                     pilot_len: int = PILOT_LEN) -> IncrementSeries:
    """One centered increment path ``X_1..X_n``.

    ``exact`` subtracts the enumerated per-step means (``n <= 10``);
    ``long-run`` subtracts a pilot mean. ``auto`` picks exact when feasible.
    """
    if centering_mode == "auto":
        centering_mode = "exact" if n <= EXACT_MAX_N else "long-run"
    f = ctx.path(n, rng.stream(seed, rng.MAIN))
    if centering_mode == "exact":
        center = exact_step_means(ctx, n)
        se = 0.0
    elif centering_mode == "long-run":
        mu, se = long_run_mean(ctx, seed, pilot_len)
        center = np.full(n, mu)
    else:
        raise ValueError(f"unknown centering mode {centering_mode!r}")
    return IncrementSeries(n, f - center, centering_mode, center, se)


@dataclass(frozen=True)
class PartialSumStats:
    n: int
    reps: int
    s_n: np.ndarray
    sigma2_n: float
    stderr: float


def partial_sums(ctx: IncrementModel, n: int, reps: int, seed: int, center: float = 0.0,
                 purpose: int = rng.MAIN) -> PartialSumStats:
    """``S_n`` for ``reps`` independent stationary paths and ``Var(S_n)``."""
    s = ctx.checkpoint_sums([n], reps, seed, purpose)[:, 0] - n * center
    var, se = fitting.sample_variance_se(s)
    return PartialSumStats(n, reps, s, var, se)


@dataclass(frozen=True)
class AutocovSeries:
    a: np.ndarray
    stderr: np.ndarray
    J: int
    sigma2: float
    sigma2_stderr: float

    def rows(self):
        return [(j, float(self.a[j]), float(self.stderr[j])) for j in range(self.J + 1)]


def autocov(ctx: IncrementModel, J: int = 50, n: int = 200_000, reps: int = 64, seed: int = 0,
            pilot_len: int = PILOT_LEN, center: float | None = None) -> AutocovSeries:
    """Limiting autocovariances ``a_0..a_J`` and ``σ² = a_0 + 2 Σ a_j``.

    Products ``X_i X_{i+j}`` are averaged over ``i >= n/2`` (where the
    transient in ``i`` has died out) and over replicas.
    """
    if J > n / 10:
        raise ValueError("need J <= n/10")
    mu = long_run_mean(ctx, seed, pilot_len)[0] if center is None else center
    start = n // 2

    def one(r):
        x = ctx.path(n, rng.stream(seed, rng.MAIN, r)) - mu
        m = n - start - J
        head = x[start:start + m]
        return np.array([head @ x[start + j:start + j + m] / m for j in range(J + 1)])

    per_rep = np.array(rng.replica_map(one, reps))
    a = per_rep.mean(axis=0)
    se = per_rep.std(axis=0, ddof=1) / np.sqrt(reps)
    s2_rep = per_rep[:, 0] + 2 * per_rep[:, 1:].sum(axis=1)
    sigma2 = float(a[0] + 2 * a[1:].sum())
    if sigma2 < -1e-9:
        raise NegativeVarianceEstimate(f"a0 + 2 sum a_j = {sigma2!r}")
    return AutocovSeries(a, se, J, sigma2, float(s2_rep.std(ddof=1) / np.sqrt(reps)))


@dataclass(frozen=True)
class VarianceCurve:
    n_grid: np.ndarray
    ratios: np.ndarray
    stderr: np.ndarray
    exponent: float

    def rows(self):
        return [(int(n), float(r), float(s)) for n, r, s in zip(self.n_grid, self.ratios, self.stderr)]


def checkpoint_sums(ctx: IncrementModel, n_grid, reps: int, seed: int, purpose: int = rng.MAIN) -> np.ndarray:
    """``D^l log p^θ(Z_1^n)`` at every ``n`` in the grid, one path per replica (``(reps, len(grid))``)."""
    return ctx.checkpoint_sums(n_grid, reps, seed, purpose)


def variance_curve(ctx: IncrementModel, n_grid, reps: int, seed: int) -> VarianceCurve:
    """``σ_n² / n`` along an increasing grid, with standard errors.

    ``exponent`` is the log-log slope of successive ratio differences, a rough
    convergence-rate indicator with no pass threshold attached.
    """
    grid = np.asarray(n_grid, dtype=np.int64)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("n_grid must be increasing")
    sums = checkpoint_sums(ctx, grid, reps, seed)
    ratios, ses = [], []
    for k, n in enumerate(grid):
        v, se = fitting.sample_variance_se(sums[:, k])
        ratios.append(v / n)
        ses.append(se / n)
    ratios = np.array(ratios)
    diffs = np.abs(np.diff(ratios))
    keep = diffs > 0
    exponent = float("nan")
    if keep.sum() >= 2:
        mids = np.sqrt(grid[1:] * grid[:-1].astype(float))
        exponent = fitting.ols(np.log(mids[keep]), np.log(diffs[keep]))[0]
    return VarianceCurve(grid, ratios, np.array(ses), exponent)


@dataclass(frozen=True)
class BlockPartition:
    n: int
    alpha: float
    beta: float
    short_len: int
    long_len: int
    k: int
    short_starts: np.ndarray
    long_starts: np.ndarray

    def short_ranges(self):
        return [(int(s), int(s) + self.short_len) for s in self.short_starts]

    def long_ranges(self):
        return [(int(s), int(s) + self.long_len) for s in self.long_starts]

    @property
    def covered(self) -> int:
        return self.k * (self.short_len + self.long_len)


def _floor_pow(n: int, e: float) -> int:
    return int(math.floor(n ** e + 1e-9))


def make_blocks(n: int, alpha: float = 0.5, beta: float = 0.1) -> BlockPartition:
    """Alternating short/long blocks ``η_1 ζ_1 η_2 ζ_2 ...`` (0-based, half-open).

    Short blocks have length ``⌊n^β⌋`` and long blocks ``⌊n^α⌋``; the block
    pair count is ``⌊n / (long + short)⌋`` and the uncovered tail is shorter
    than one pair.
    """
    if not 0 < beta < alpha < 1:
        raise BadExponents(f"need 0 < beta < alpha < 1, got alpha={alpha}, beta={beta}")
    p, q = _floor_pow(n, beta), _floor_pow(n, alpha)
    k = n // (p + q)
    if k < 1:
        raise TooShort(f"n={n} shorter than one block pair ({p} + {q})")
    starts = np.arange(k) * (p + q)
    return BlockPartition(n, alpha, beta, p, q, k, starts, starts + p)


@dataclass(frozen=True)
class BlockSums:
    zeta: np.ndarray      # (reps, k)
    zeta_hat: np.ndarray  # (reps, k)
    window: int

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.zeta - self.zeta_hat)))

    def adjacent_correlation(self) -> float:
        a = self.zeta_hat[:, :-1].ravel()
        b = self.zeta_hat[:, 1:].ravel()
        return float(np.corrcoef(a, b)[0, 1])


HALF_GAP_RULES = ("half_long", "half_short")


def truncated_block_sums(ctx: IncrementModel, partition: BlockPartition, half_gap_rule: str = "half_long",
                         reps: int = 1, seed: int = 0, center: float = 0.0) -> BlockSums:
    """Long-block sums ``ζ_i`` and their truncated versions ``ζ̂_i``.

    Inside ``ζ̂_i`` each increment conditions only on symbols from a fixed
    point before the block: ``⌈long/2⌉`` symbols back for ``half_long`` (the
    truncation error then decays in the long-block length) or ``⌈short/2⌉``
    for ``half_short``.
    """
    if half_gap_rule == "half_long":
        window = -(-partition.long_len // 2)
    elif half_gap_rule == "half_short":
        window = -(-partition.short_len // 2)
    else:
        raise ValueError(f"half_gap_rule must be one of {HALF_GAP_RULES}")
    n, k, q = partition.n, partition.k, partition.long_len

    def one(r):
        z = ctx.simulate(n, rng.stream(seed, rng.MAIN, r))
        f = ctx.f_values(z) - center
        zeta = np.empty(k)
        zhat = np.empty(k)
        for i, s in enumerate(partition.long_starts):
            zeta[i] = f[s:s + q].sum()
            c = max(0, s - window)
            g = ctx.f_values(z[c:s + q])[s - c:] - center
            zhat[i] = g.sum()
        return zeta, zhat

    out = rng.replica_map(one, reps)
    return BlockSums(np.array([o[0] for o in out]), np.array([o[1] for o in out]), window)


@dataclass(frozen=True)
class MomentGrowth:
    moment: int
    n_grid: np.ndarray
    moments: np.ndarray
    exponent: fitting.Band


def moment_growth(ctx: IncrementModel, moment: int, n_grid, reps: int, seed: int,
                  center: float | None = None, resamples: int = 1000) -> MomentGrowth:
    """Log-log growth exponent of ``E|S_n|^m`` with a bootstrap band."""
    if moment not in (2, 3, 4):
        raise ValueError("moment must be 2, 3 or 4")
    if reps < 1000:
        raise ValueError("moment_growth needs reps >= 1000")
    grid = np.asarray(n_grid, dtype=np.int64)
    mu = long_run_mean(ctx, seed)[0] if center is None else center
    s = checkpoint_sums(ctx, grid, reps, seed) - grid[None, :] * mu
    pw = np.abs(s) ** moment
    logn = np.log(grid.astype(float))

    def slope(rows):
        return fitting.ols(logn, np.log(pw[rows].mean(axis=0)))[0]

    est = slope(slice(None))
    band = fitting.bootstrap_band(lambda g: slope(g.integers(0, reps, reps)), est,
                                  rng.stream(seed, rng.BOOTSTRAP), resamples)
    return MomentGrowth(moment, grid, pw.mean(axis=0), band)
