"""Desk-scale experiments for the limit theorems of log-likelihood derivatives.

Every experiment takes an :class:`ExperimentConfig` and returns a report
object with ``to_dict()`` (JSON payload), ``tables()`` (CSV series) and
``verdict()``. Randomness comes only from streams derived from ``cfg.seed``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fitting, rng
from .config import ExperimentConfig
from .deriv_engine import deriv_forgetting_gap, estimate_L
from .errors import CylinderTooLong, DegenerateVariance
from .hmm_model import HmmSpec, TailGapResult, all_sequences, cond_prob_bounds, conditional_tail_gap
from .limit_stats import IncrementModel, autocov, long_run_mean, variance_curve
from .markov_core import PathStream, StochasticMatrix, entropy_rate, lambda2, stationary

SIGMA_MIN = 0.05
BOOT = 1000
MAX_CYLINDER = 4
MAX_ALPHABET = 3
LIL_BAND = (0.5, 1.5)
LIL_ENVELOPE = 3.0
LIL_CHUNK = 1 << 20


def _tab(header, rows):
    return (list(header), [list(r) for r in rows])


def centre_and_scale(cfg: ExperimentConfig, ctx: IncrementModel, need_sigma: bool = True):
    """Stationary mean ``L`` of the increments and (optionally) ``σ²``.

    ``L`` comes from the predictive-expectation pilot; ``σ²`` from
    :func:`autocov` unless the config pins it.
    """
    mean, mean_se = long_run_mean(ctx, cfg.seed)
    if not need_sigma:
        return mean, mean_se, None, None
    if cfg.sigma2 is not None:
        return mean, mean_se, float(cfg.sigma2), 0.0
    ac = autocov(ctx, J=cfg.J, n=cfg.autocov_n, reps=cfg.autocov_reps, seed=cfg.seed, center=mean)
    return mean, mean_se, ac.sigma2, ac.sigma2_stderr


def _require_sigma(sigma2: float) -> None:
    if not sigma2 > SIGMA_MIN**2:
        raise DegenerateVariance(
            f"sigma = {math.sqrt(max(sigma2, 0.0)):.3g} <= {SIGMA_MIN}: the normalized statistic has a "
            "degenerate limit (a point mass at 0), so no Gaussian approximation is tested")


def _grid(cfg: ExperimentConfig, default) -> np.ndarray:
    return np.asarray(cfg.n_grid if cfg.n_grid else default, dtype=np.int64)


# law of large numbers

@dataclass(frozen=True)
class LlnReport:
    n_grid: np.ndarray
    median: np.ndarray
    median_se: np.ndarray
    q95: np.ndarray
    reference: float
    reference_se: float
    exponent: fitting.Band
    reps: int

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.median) < 0))

    def verdict(self) -> dict:
        return {"median_decreasing": self.decreasing, "exponent_band_below_zero": self.exponent.hi < 0}

    def to_dict(self) -> dict:
        return {"n_grid": self.n_grid.tolist(), "median": self.median.tolist(),
                "median_se": self.median_se.tolist(), "q95": self.q95.tolist(),
                "reference": self.reference, "reference_se": self.reference_se,
                "exponent": self.exponent.to_dict(), "reps": self.reps}

    def tables(self) -> dict:
        rows = zip(self.n_grid.tolist(), self.median.tolist(), self.median_se.tolist(), self.q95.tolist())
        return {"lln": _tab(("n", "median_dev", "stderr", "q95_dev"), rows)}


def run_lln(cfg: ExperimentConfig) -> LlnReport:
    """Deviation ``|D^l log p^θ(Z_1^n)/n - L̂|`` across replicas at each grid ``n``."""
    ctx = cfg.context()
    grid = _grid(cfg, (1000, 10_000, 100_000))
    ref, ref_se = long_run_mean(ctx, cfg.seed)
    sums = ctx.checkpoint_sums(grid, cfg.reps, cfg.seed)
    dev = np.abs(sums / grid[None, :] - ref)
    med = np.median(dev, axis=0)
    gen = rng.stream(cfg.seed, rng.BOOTSTRAP)
    boot_meds = np.array([np.median(dev[gen.integers(0, cfg.reps, cfg.reps)], axis=0) for _ in range(BOOT)])
    logn = np.log(grid.astype(float))
    slopes = np.array([fitting.ols(logn, np.log(m))[0] if np.all(m > 0) else np.nan for m in boot_meds])
    est = fitting.ols(logn, np.log(med))[0] if np.all(med > 0) else float("nan")
    slopes = slopes[np.isfinite(slopes)]
    lo, hi = np.quantile(slopes, [0.025, 0.975]) if slopes.size else (np.nan, np.nan)
    return LlnReport(grid, med, boot_meds.std(axis=0, ddof=1), np.quantile(dev, 0.95, axis=0),
                     ref, ref_se, fitting.Band(float(est), float(lo), float(hi)), cfg.reps)


@dataclass(frozen=True)
class EntropyReport:
    n: int
    reps: int
    estimate: float
    stderr: float
    markov_entropy: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - 3 * self.stderr, self.estimate + 3 * self.stderr

    def verdict(self) -> dict:
        lo, hi = self.ci
        return {"markov_entropy_within_3se": bool(lo <= self.markov_entropy <= hi)}

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {"n": self.n, "reps": self.reps, "estimate": self.estimate, "stderr": self.stderr,
                "ci_lo": lo, "ci_hi": hi, "markov_entropy": self.markov_entropy}

    def tables(self) -> dict:
        return {}


def run_entropy(cfg: ExperimentConfig) -> EntropyReport:
    """Monte Carlo ``-log p(Z_1^n)/n`` at θ0, next to the entropy rate of the hidden chain.

    The hidden-chain value is the exact limit only for an (almost) noiseless
    channel; otherwise it is reported for reference.
    """
    fam, ch = cfg.family_obj(), cfg.channel()
    n = cfg.n or 100_000
    est = estimate_L(fam, ch, fam.theta0, 0, n, cfg.reps, cfg.seed)
    h = cfg.source_hmm()
    return EntropyReport(n, cfg.reps, -est.value, est.stderr, entropy_rate(h.kernel, h.pi))


# central limit theorem

def _ks_from_sorted(g: np.ndarray, counts: np.ndarray | None = None) -> float:
    """KS distance given the normal CDF at the sorted sample (optionally reweighted by counts)."""
    n = g.size
    if counts is None:
        hi_cdf = np.arange(1, n + 1) / n
        lo_cdf = np.arange(0, n) / n
    else:
        c = np.cumsum(counts)
        hi_cdf = c / n
        lo_cdf = (c - counts) / n
    return float(max((hi_cdf - g).max(), (g - lo_cdf).max(), 0.0))


@dataclass(frozen=True)
class KsReport:
    n_grid: np.ndarray
    ks: np.ndarray
    samples: int
    exponent: fitting.Band
    mean: float
    sigma2: float
    sigma2_stderr: float

    def verdict(self) -> dict:
        return {"ks_last_below_first": bool(self.ks[-1] < self.ks[0]),
                "consistent_with_rate_le_-0.2": bool(self.exponent.lo <= -0.2),
                "sigma_rel_se_le_2pct": bool(self.sigma2_stderr <= 0.04 * self.sigma2)}

    def to_dict(self) -> dict:
        return {"n_grid": self.n_grid.tolist(), "ks": self.ks.tolist(), "samples": self.samples,
                "exponent": self.exponent.to_dict(), "mean": self.mean, "sigma2": self.sigma2,
                "sigma2_stderr": self.sigma2_stderr}

    def tables(self) -> dict:
        rows = [(int(n), float(k), self.samples) for n, k in zip(self.n_grid, self.ks)]
        return {"ks": _tab(("n", "ks", "samples"), rows)}


def run_clt(cfg: ExperimentConfig) -> KsReport:
    """Kolmogorov distance of ``(D^l log p^θ(Z_1^n) - n L) / (√n σ)`` from N(0, 1)."""
    ctx = cfg.context()
    grid = _grid(cfg, (256, 1024, 4096))
    mean, _, s2, s2_se = centre_and_scale(cfg, ctx)
    _require_sigma(s2)
    sums = ctx.checkpoint_sums(grid, cfg.reps, cfg.seed)
    sig = math.sqrt(s2)
    orders, cdfs, ks = [], [], []
    for k, n in enumerate(grid):
        t = (sums[:, k] - n * mean) / (math.sqrt(n) * sig)
        o = np.argsort(t, kind="stable")
        g = fitting.normal_cdf(t[o])
        orders.append(o)
        cdfs.append(g)
        ks.append(_ks_from_sorted(g))
    ks = np.array(ks)
    logn = np.log(grid.astype(float))
    gen = rng.stream(cfg.seed, rng.BOOTSTRAP)
    reps = cfg.reps

    def boot(_):
        counts = np.bincount(gen.integers(0, reps, reps), minlength=reps)
        vals = [_ks_from_sorted(cdfs[k], counts[orders[k]]) for k in range(grid.size)]
        return fitting.ols(logn, np.log(vals))[0]

    est = fitting.ols(logn, np.log(ks))[0] if np.all(ks > 0) else float("nan")
    band = fitting.bootstrap_band(boot, est, gen, BOOT)
    return KsReport(grid, ks, reps, band, mean, s2, s2_se)


# law of the iterated logarithm

@dataclass(frozen=True)
class LilPath:
    n_grid: np.ndarray
    r: np.ndarray
    running_max_abs: np.ndarray
    running_max: np.ndarray

    @property
    def final_max_abs(self) -> float:
        return float(self.running_max_abs[-1])

    @property
    def final_max(self) -> float:
        return float(self.running_max[-1])


def lil_ratio(s: np.ndarray, n: np.ndarray, sigma2: float) -> np.ndarray:
    """``R_n = S_n / sqrt(2 n σ² log log(n σ²))``; needs ``n σ² > e``."""
    v = n * sigma2
    if np.any(v <= math.e):
        raise ValueError("R_n needs n σ² > e")
    return s / np.sqrt(2 * v * np.log(np.log(v)))


@dataclass(frozen=True)
class LilReport:
    paths: list
    n_min: int
    n_max: int
    mean: float
    sigma2: float

    def counts(self) -> dict:
        lo, hi = LIL_BAND
        a = np.array([p.final_max_abs for p in self.paths])
        s = np.array([p.final_max for p in self.paths])
        return {"in_band_abs": int(np.sum((a >= lo) & (a <= hi))),
                "in_band_signed": int(np.sum((s >= lo) & (s <= hi))),
                "trajectories": len(self.paths), "max_abs_R": float(a.max())}

    def verdict(self) -> dict:
        c = self.counts()
        return {"in_band_fraction_ge_0.875": c["in_band_abs"] >= 0.875 * c["trajectories"],
                "below_envelope_3": c["max_abs_R"] <= LIL_ENVELOPE}

    def to_dict(self) -> dict:
        return {"n_min": self.n_min, "n_max": self.n_max, "mean": self.mean, "sigma2": self.sigma2,
                "band": list(LIL_BAND), **self.counts(),
                "final_max_abs": [p.final_max_abs for p in self.paths],
                "final_max": [p.final_max for p in self.paths]}

    def tables(self) -> dict:
        rows = []
        for i, p in enumerate(self.paths):
            for n, r, ma, ms in zip(p.n_grid, p.r, p.running_max_abs, p.running_max):
                rows.append((i, int(n), float(r), float(ma), float(ms)))
        return {"lil": _tab(("trajectory", "n", "R", "running_max_abs", "running_max"), rows)}


def _lil_path(ctx: IncrementModel, seed: int, r: int, n_min: int, n_max: int, mean: float,
              sigma2: float, grid: np.ndarray) -> LilPath:
    src = ctx.source
    ps = PathStream(src.kernel.rows, src.pi.probs, src.channel.emit, rng.stream(seed, rng.MAIN, r))
    filt = ctx.eval.filter()
    total, best_abs, best = 0.0, -np.inf, -np.inf
    r_at, mabs_at, m_at = [], [], []
    gi = 0
    for a, b in rng.chunked(n_max, LIL_CHUNK):
        f = filt.advance(ps.next(b - a)[1], per_step=True)[:, ctx.order]
        s = total + np.cumsum(f - mean)
        total = float(s[-1])
        n = np.arange(a + 1, b + 1, dtype=float)
        keep = n >= n_min
        run_abs = np.full(n.size, best_abs)
        run = np.full(n.size, best)
        if keep.any():
            rr = lil_ratio(s[keep], n[keep], sigma2)
            run_abs[keep] = np.maximum.accumulate(np.maximum(np.abs(rr), best_abs))
            run[keep] = np.maximum.accumulate(np.maximum(rr, best))
            best_abs, best = float(run_abs[-1]), float(run[-1])
        while gi < grid.size and grid[gi] <= b:
            k = grid[gi] - a - 1
            r_at.append(float(lil_ratio(np.array([s[k]]), np.array([float(grid[gi])]), sigma2)[0]))
            mabs_at.append(float(run_abs[k]))
            m_at.append(float(run[k]))
            gi += 1
    return LilPath(grid.copy(), np.array(r_at), np.array(mabs_at), np.array(m_at))


def run_lil(cfg: ExperimentConfig, n_min: int = 1000) -> LilReport:
    """``cfg.reps`` independent trajectories up to ``n_max = cfg.n`` (default 10⁷).

    The running maxima of ``R_n`` and ``|R_n|`` over ``n_min <= n <= n_max``
    are tracked at every step and recorded on a dyadic grid.
    """
    ctx = cfg.context()
    n_max = int(cfg.n or 10_000_000)
    mean, _, s2, _ = centre_and_scale(cfg, ctx)
    _require_sigma(s2)
    if n_min * s2 <= math.e:
        raise ValueError(f"n_min σ² = {n_min * s2:.3g} must exceed e")
    grid = 2 ** np.arange(math.ceil(math.log2(n_min)), math.floor(math.log2(n_max)) + 1)
    grid = np.unique(np.append(grid, n_max)).astype(np.int64)
    paths = rng.replica_map(lambda r: _lil_path(ctx, cfg.seed, r, n_min, n_max, mean, s2, grid), cfg.reps)
    return LilReport(paths, n_min, n_max, mean, s2)


# Chernoff-type tails

def increment_bound(ctx: IncrementModel, mean: float) -> float | None:
    """Upper bound on ``X_i = log p(Z_i | past) - mean`` (order 0 only)."""
    if ctx.order != 0:
        return None
    return math.log(cond_prob_bounds(ctx.eval.hmm)[1]) - mean


def fit_subexponential(ns, p, weights=None) -> tuple[float, float]:
    """Fit ``log p ≈ log C + n^(1-ε) log γ`` by a grid over ε; returns ``(γ, ε)``."""
    ns = np.asarray(ns, float)
    y = np.log(np.asarray(p, float))
    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    best = (np.inf, float("nan"), float("nan"))
    for eps in np.linspace(0.0, 0.95, 96):
        t = ns ** (1 - eps)
        coef = np.polyfit(t, y, 1, w=np.sqrt(w))
        rss = float(np.sum(w * (y - np.polyval(coef, t)) ** 2))
        if rss < best[0] - 1e-12:
            best = (rss, float(np.exp(coef[0])), float(eps))
    return best[1], best[2]


@dataclass(frozen=True)
class TailReport:
    x: float
    n_grid: np.ndarray
    exceed: np.ndarray
    reps: int
    gamma: fitting.Band
    eps: fitting.Band
    bound: float | None
    mean: float

    @property
    def p_hat(self) -> np.ndarray:
        return self.exceed / self.reps

    @property
    def stderr(self) -> np.ndarray:
        p = self.p_hat
        return np.sqrt(p * (1 - p) / self.reps)

    def cp_bounds(self):
        return [fitting.clopper_pearson(int(k), self.reps) for k in self.exceed]

    @property
    def no_exceedances(self) -> bool:
        return bool(np.all(self.exceed == 0))

    def verdict(self) -> dict:
        p, se = self.p_hat, self.stderr
        mono = bool(np.all(p[1:] <= p[:-1] + 2 * np.hypot(se[1:], se[:-1])))
        out = {"nonincreasing_within_2se": mono, "last_le_first": bool(p[-1] <= p[0]),
               "rare_at_smallest_n": bool(self.exceed[0] < 5), "no_exceedances": self.no_exceedances}
        if self.bound is not None:
            out["x_beyond_increment_bound"] = bool(self.x > self.bound)
        if np.isfinite(self.gamma.hi):
            out["gamma_band_below_1"] = bool(self.gamma.hi < 1)
        return out

    def to_dict(self) -> dict:
        return {"x": self.x, "n_grid": self.n_grid.tolist(), "exceed": self.exceed.tolist(),
                "reps": self.reps, "p_hat": self.p_hat.tolist(), "stderr": self.stderr.tolist(),
                "cp_bounds": [list(b) for b in self.cp_bounds()], "gamma": self.gamma.to_dict(),
                "eps": self.eps.to_dict(), "increment_bound": self.bound, "mean": self.mean}

    def tables(self) -> dict:
        rows = [(self.x, int(n), int(k), float(p), float(s), lo, hi)
                for n, k, p, s, (lo, hi) in zip(self.n_grid, self.exceed, self.p_hat, self.stderr,
                                                self.cp_bounds())]
        return {"tail": _tab(("x", "n", "exceed", "p_hat", "stderr", "cp_lo", "cp_hi"), rows)}


def _tail_fit(grid, exceed, reps, gen):
    def fit(k):
        keep = k > 0
        if keep.sum() < 2:
            return float("nan"), float("nan")
        p = k[keep] / reps
        return fit_subexponential(grid[keep], p, k[keep] / (1 - p + 1e-300))

    g0, e0 = fit(exceed)
    if not np.isfinite(g0):
        nan = fitting.Band(float("nan"), float("nan"), float("nan"))
        return nan, nan
    p = exceed / reps
    draws = np.array([fit(gen.binomial(reps, p)) for _ in range(BOOT)])
    draws = draws[np.all(np.isfinite(draws), axis=1)]
    glo, ghi = np.quantile(draws[:, 0], [0.025, 0.975])
    elo, ehi = np.quantile(draws[:, 1], [0.025, 0.975])
    return fitting.Band(g0, float(glo), float(ghi)), fitting.Band(e0, float(elo), float(ehi))


def run_chernoff(cfg: ExperimentConfig, x: float | None = None) -> list[TailReport]:
    """Empirical ``P(S_n / n >= x)`` for each threshold (``cfg.x`` unless given)."""
    xs = [x] if x is not None else list(cfg.x)
    if not xs or min(xs) <= 0:
        raise ValueError("thresholds x must be positive")
    ctx = cfg.context()
    grid = _grid(cfg, (200, 500, 1000, 2000))
    mean, _, _, _ = centre_and_scale(cfg, ctx, need_sigma=False)
    s = ctx.checkpoint_sums(grid, cfg.reps, cfg.seed) / grid[None, :] - mean
    bound = increment_bound(ctx, mean)
    out = []
    for i, xv in enumerate(xs):
        exceed = (s >= xv).sum(axis=0).astype(np.int64)
        gamma, eps = _tail_fit(grid, exceed, cfg.reps, rng.stream(cfg.seed, rng.BOOTSTRAP, i))
        out.append(TailReport(float(xv), grid, exceed, cfg.reps, gamma, eps, bound, mean))
    return out


# ψ-mixing

@dataclass(frozen=True)
class MixingProfile:
    n_grid: np.ndarray
    psi: np.ndarray
    cylinder_len: int
    rate: fitting.Band
    lambda2: float

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.psi) < 0))

    def verdict(self) -> dict:
        return {"strictly_decreasing": self.strictly_decreasing,
                "rate_le_lambda2_plus_0.05": bool(self.rate.hi <= self.lambda2 + 0.05)}

    def to_dict(self) -> dict:
        return {"n_grid": self.n_grid.tolist(), "psi": self.psi.tolist(), "cylinder_len": self.cylinder_len,
                "rate": self.rate.to_dict(), "lambda2": self.lambda2}

    def tables(self) -> dict:
        return {"psi": _tab(("n", "psi"), zip(self.n_grid.tolist(), self.psi.tolist()))}


def psi_mixing_profile(h: HmmSpec, n_grid, cylinder_len: int = 3) -> MixingProfile:
    """Exact ψ̂(n) over past/future cylinders of length ``<= cylinder_len``.

    A past cylinder ``U`` ends at time 0 and a future cylinder ``V`` starts at
    time ``n``, so ``P(U ∩ V) = π Δ_U Δ^(n-1) Δ_V 1``. The value is a lower
    bound for ψ(n). The decay rate is fitted on the grid; being exact, its
    band is the point estimate itself.
    """
    if cylinder_len > MAX_CYLINDER or h.n_symbols > MAX_ALPHABET:
        raise CylinderTooLong(f"need cylinder_len <= {MAX_CYLINDER} and alphabet <= {MAX_ALPHABET}")
    if cylinder_len < 1:
        raise CylinderTooLong("cylinder_len must be >= 1")
    grid = np.asarray(n_grid, dtype=np.int64)
    if grid.size == 0 or grid[0] < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("n_grid must be positive and increasing")
    s, pi = h.n_states, h.pi.probs
    past, future = [], []
    for ell in range(1, cylinder_len + 1):
        for w in all_sequences(h.n_symbols, ell):
            a = pi.copy()
            for z in w:
                a = a @ h.symbol_mats[z]
            past.append(a / a.sum())
            b = np.ones(s)
            for z in w[::-1]:
                b = h.symbol_mats[z] @ b
            future.append(b)
    filt = np.array(past)      # rows: P(Y_0 = . | U)
    col = np.array(future).T   # columns: P(V | Y_{n-1} = .)
    pv = pi @ col
    delta = h.kernel.rows
    psi = np.empty(grid.size)
    cur, power = filt.copy(), 1
    for k, n in enumerate(grid):
        while power < n:
            cur = cur @ delta
            power += 1
        psi[k] = np.max(np.abs((cur - pi) @ col) / pv)
    lam = lambda2(h.kernel)
    keep = psi > fitting.DEGENERATE_GAP
    rate = float("nan")
    if keep.sum() >= 2:
        rate = float(np.exp(fitting.ols(grid[keep], np.log(psi[keep]))[0]))
    return MixingProfile(grid, psi, int(cylinder_len), fitting.Band(rate, rate, rate), lam)


def markov_psi(kernel: StochasticMatrix, n_grid) -> np.ndarray:
    """ψ(n) of a directly observed chain: ``max_{a,b} |Δ^n(a,b) - π_b| / π_b``."""
    pi = stationary(kernel).probs
    out = []
    for n in np.asarray(n_grid, dtype=np.int64):
        p = np.linalg.matrix_power(kernel.rows, int(n))
        out.append(float(np.max(np.abs(p - pi[None, :]) / pi[None, :])))
    return np.array(out)


# forgetting

@dataclass(frozen=True)
class ForgettingReport:
    conditional: TailGapResult
    derivative: dict
    lambda2: float

    def shrink(self, res: TailGapResult, a: int = 5, b: int = 20) -> float:
        gb = res.gap(b)
        return float("inf") if gb == 0 else res.gap(a) / gb

    def verdict(self) -> dict:
        out = {"conditional_shrink_5_to_20_ge_10": self.shrink(self.conditional) >= 10}
        for order, res in self.derivative.items():
            out[f"order{order}_shrink_5_to_20_ge_10"] = self.shrink(res) >= 10
        return out

    def to_dict(self) -> dict:
        return {"conditional": self.conditional.to_dict(),
                "derivative": {str(k): v.to_dict() for k, v in self.derivative.items()},
                "lambda2": self.lambda2}

    def tables(self) -> dict:
        rows = [("conditional", int(w), float(g)) for w, g in zip(self.conditional.windows, self.conditional.gaps)]
        for k, v in self.derivative.items():
            rows += [(f"order{k}", int(w), float(g)) for w, g in zip(v.windows, v.gaps)]
        return {"gaps": _tab(("quantity", "window", "gap"), rows)}


def run_forgetting(cfg: ExperimentConfig) -> ForgettingReport:
    """Conditional-probability and derivative gaps for windows ``1..cfg.window``."""
    fam, ch = cfg.family_obj(), cfg.channel()
    h = cfg.source_hmm()
    window = max(cfg.window, 20)
    cond = conditional_tail_gap(h, window, cfg.samples, cfg.seed)
    deriv = {o: deriv_forgetting_gap(fam, ch, cfg.theta_eval, o, window, cfg.samples, cfg.seed) for o in (1, 2)}
    return ForgettingReport(cond, deriv, lambda2(h.kernel))


# variance

@dataclass(frozen=True)
class VarianceReport:
    autocov: object
    curve: object
    mean: float

    @property
    def relative_gap(self) -> float:
        return abs(self.curve.ratios[-1] - self.autocov.sigma2) / abs(self.autocov.sigma2)

    def verdict(self) -> dict:
        a = np.abs(self.autocov.a)
        return {"autocov_vs_var_within_5pct": bool(self.relative_gap <= 0.05),
                "autocov_decays": bool(a[10:].max() <= a[:10].max()) if a.size > 10 else None}

    def to_dict(self) -> dict:
        return {"sigma2": self.autocov.sigma2, "sigma2_stderr": self.autocov.sigma2_stderr,
                "a": self.autocov.a.tolist(), "a_stderr": self.autocov.stderr.tolist(),
                "n_grid": self.curve.n_grid.tolist(), "ratios": self.curve.ratios.tolist(),
                "ratio_stderr": self.curve.stderr.tolist(), "curve_exponent": self.curve.exponent,
                "mean": self.mean, "relative_gap": self.relative_gap}

    def tables(self) -> dict:
        return {"autocov": _tab(("j", "estimate", "stderr"), self.autocov.rows()),
                "variance_curve": _tab(("n", "estimate", "stderr"), self.curve.rows())}


def run_variance(cfg: ExperimentConfig) -> VarianceReport:
    """``σ²`` from autocovariances next to ``Var(S_n)/n`` along the grid."""
    ctx = cfg.context()
    mean, _ = long_run_mean(ctx, cfg.seed)
    ac = autocov(ctx, J=cfg.J, n=cfg.autocov_n, reps=cfg.autocov_reps, seed=cfg.seed, center=mean)
    curve = variance_curve(ctx, _grid(cfg, (64, 256, 1024, 4096, 10_000)), cfg.reps, cfg.seed)
    return VarianceReport(ac, curve, mean)


# variance dichotomy

@dataclass(frozen=True)
class DichotomyReport:
    n_grid: np.ndarray
    second_moment: np.ndarray
    stderr: np.ndarray
    constant: float
    constant_rss: float
    slope: float
    slope_stderr: float
    linear_rss: float
    source: str

    @property
    def classification(self) -> str:
        return "bounded" if self.constant_rss <= self.linear_rss else "linear-growth"

    def verdict(self) -> dict:
        return {"classification": self.classification}

    def to_dict(self) -> dict:
        return {"n_grid": self.n_grid.tolist(), "second_moment": self.second_moment.tolist(),
                "stderr": self.stderr.tolist(), "constant": self.constant, "constant_rss": self.constant_rss,
                "slope": self.slope, "slope_stderr": self.slope_stderr, "linear_rss": self.linear_rss,
                "source": self.source, "classification": self.classification}

    def tables(self) -> dict:
        rows = zip(self.n_grid.tolist(), self.second_moment.tolist(), self.stderr.tolist())
        return {"second_moment": _tab(("n", "estimate", "stderr"), rows)}


def coboundary_sums(h: HmmSpec, g, n_grid, reps: int, seed: int) -> np.ndarray:
    """``S_n = Σ_{i<=n} (g(Z_i) - g(Z_{i+1})) = g(Z_1) - g(Z_{n+1})`` per replica and grid point."""
    from .hmm_model import simulate_hmm

    g = np.asarray(g, float)
    grid = np.asarray(n_grid, dtype=np.int64)

    def one(r):
        z = simulate_hmm(h, int(grid[-1]) + 1, rng.stream(seed, rng.MAIN, r))[1]
        return g[z[0]] - g[z[grid]]

    return np.array(rng.replica_map(one, reps))


def classify_growth(grid, m2, se, source: str = "") -> DichotomyReport:
    """Weighted fits of ``E[S_n²]`` by a constant and by ``slope · n``."""
    grid = np.asarray(grid, dtype=np.int64)
    n = grid.astype(float)
    w = 1.0 / np.maximum(se, 1e-300) ** 2
    c = float(np.sum(w * m2) / np.sum(w))
    rss_c = float(np.sum(w * (m2 - c) ** 2))
    slope = float(np.sum(w * m2 * n) / np.sum(w * n * n))
    rss_l = float(np.sum(w * (m2 - slope * n) ** 2))
    slope_se = float(1.0 / np.sqrt(np.sum(w * n * n)))
    return DichotomyReport(grid, m2, se, c, rss_c, slope, slope_se, rss_l, source)


def variance_dichotomy(cfg: ExperimentConfig) -> DichotomyReport:
    """Bounded versus linearly growing ``E[S_n²]`` along a grid spanning two decades.

    ``cfg.source = "coboundary"`` replaces the likelihood increments by
    ``g(Z_i) - g(Z_{i+1})`` (``g`` defaults to the symbol index).
    """
    grid = _grid(cfg, (10, 100, 1000, 10_000))
    if grid[-1] < 100 * grid[0]:
        raise ValueError("n_grid must span at least two decades")
    if cfg.source == "coboundary":
        h = cfg.source_hmm()
        g = np.arange(h.n_symbols, dtype=float) if cfg.g is None else np.asarray(cfg.g, float)
        if g.size != h.n_symbols:
            raise ValueError("g needs one value per symbol")
        s = coboundary_sums(h, g, grid, cfg.reps, cfg.seed)
    else:
        ctx = cfg.context()
        mean, _ = long_run_mean(ctx, cfg.seed)
        s = ctx.checkpoint_sums(grid, cfg.reps, cfg.seed) - grid[None, :] * mean
    sq = s**2
    m2 = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(cfg.reps)
    return classify_growth(grid, m2, se, cfg.source)
