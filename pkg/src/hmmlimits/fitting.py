"""Small statistical helpers shared by the experiments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

DEGENERATE_GAP = 1e-14


def normal_cdf(x):
    """Standard normal CDF (Cephes ``ndtr``; accurate to ~1e-15 relative)."""
    return special.ndtr(x)


def ks_normal(sample: np.ndarray) -> float:
    """Kolmogorov distance between the empirical CDF of ``sample`` and N(0, 1)."""
    x = np.sort(np.asarray(sample, float))
    n = x.size
    g = normal_cdf(x)
    upper = np.arange(1, n + 1) / n - g
    lower = g - np.arange(0, n) / n
    return float(max(upper.max(), lower.max(), 0.0))


def ols(x, y) -> tuple[float, float]:
    """Least-squares line; returns ``(slope, intercept)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class Band:
    estimate: float
    lo: float
    hi: float

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "lo": self.lo, "hi": self.hi}

    def within(self, lo: float, hi: float) -> bool:
        return lo <= self.lo and self.hi <= hi

    def overlaps(self, lo: float, hi: float) -> bool:
        return self.lo <= hi and lo <= self.hi


def bootstrap_band(stat: Callable[[np.random.Generator], float], estimate: float,
                   gen: np.random.Generator, resamples: int = 1000, level: float = 0.95) -> Band:
    """Percentile band from ``resamples`` calls of ``stat(gen)``."""
    draws = np.array([stat(gen) for _ in range(resamples)])
    draws = draws[np.isfinite(draws)]
    if draws.size == 0:
        return Band(estimate, float("nan"), float("nan"))
    a = (1 - level) / 2
    lo, hi = np.quantile(draws, [a, 1 - a])
    return Band(float(estimate), float(lo), float(hi))


def fit_exponential(ns, gaps) -> tuple[float, float, bool]:
    """Fit ``gap ≈ C ρ^n`` on points above the degeneracy floor.

    Returns ``(C, rho, degenerate)``; ``degenerate`` flags that some gaps were
    below the floor and therefore left out of the fit.
    """
    ns = np.asarray(ns, float)
    gaps = np.asarray(gaps, float)
    keep = gaps > DEGENERATE_GAP
    degenerate = bool(np.any(~keep))
    if keep.sum() == 0:
        return 0.0, 0.0, True
    if keep.sum() == 1:
        return float(gaps[keep][0]), float("nan"), True
    slope, icpt = ols(ns[keep], np.log(gaps[keep]))
    return float(np.exp(icpt)), float(np.exp(slope)), degenerate


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def sample_variance_se(x: np.ndarray) -> tuple[float, float]:
    """Unbiased variance and its standard error.

    Uses ``Var(s²) = (μ4 - σ⁴ (n-3)/(n-1)) / n``; the second-order term keeps
    the error honest for two-point laws, where ``μ4 ≈ σ⁴``.
    """
    x = np.asarray(x, float)
    n = x.size
    c = x - x.mean()
    var = float(c @ c / (n - 1))
    m4 = float(np.mean(c**4))
    return var, float(np.sqrt(max(m4 - var**2 * (n - 3) / (n - 1), 0.0) / n))
