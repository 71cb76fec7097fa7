"""Scalar parameter families θ ↦ Δ^θ and exact θ-derivatives of log-likelihoods.

The forward recursion carries the normalized filter together with its first
and second θ-derivatives, so the per-symbol terms
``D^l log p^θ(z_t | z_1^{t-1})`` come out by the quotient rule without ever
forming the (underflowing) unnormalized forward vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels, fitting, rng
from .errors import DimensionMismatch, ParamOutOfRange
from .hmm_model import (EmissionChannel, HmmSpec, _check_symbols, build_hmm, history_pairs,
                        simulate_hmm, validate_channel)
from .markov_core import StochasticMatrix, cumulative, primitivity_exponent, validate_kernel

MatrixFn = Callable[[float], np.ndarray]

FAMILIES = ("flip", "tilted", "logistic3", "affine")

LOGISTIC3_BASE = np.log(np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.25, 0.25, 0.5]]))
LOGISTIC3_SLOPE = np.array([[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]])


@dataclass(frozen=True, eq=False)
class ParamFamily:
    family_id: str
    theta0: float
    omega: tuple[float, float]
    kernel_fn: MatrixFn
    d1_fn: MatrixFn
    d2_fn: MatrixFn
    params: dict = field(default_factory=dict)

    def check(self, theta: float) -> float:
        lo, hi = self.omega
        if not lo < theta < hi:
            raise ParamOutOfRange(f"theta={theta!r} outside Ω=({lo}, {hi})")
        return float(theta)

    def kernel_at(self, theta: float) -> StochasticMatrix:
        return validate_kernel(self.kernel_fn(self.check(theta)))

    def kernel_d1_at(self, theta: float) -> np.ndarray:
        return np.asarray(self.d1_fn(self.check(theta)), float)

    def kernel_d2_at(self, theta: float) -> np.ndarray:
        return np.asarray(self.d2_fn(self.check(theta)), float)

    def to_json(self) -> dict:
        out = {"family": self.family_id, "theta0": self.theta0, "omega": list(self.omega)}
        out.update({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()})
        return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _logistic(base: np.ndarray, slope: np.ndarray):
    def kernel(t):
        return _softmax_rows(base + t * slope)

    def d1(t):
        p = kernel(t)
        m = (p * slope).sum(axis=1, keepdims=True)
        return p * (slope - m)

    def d2(t):
        p = kernel(t)
        c = slope - (p * slope).sum(axis=1, keepdims=True)
        var = (p * c**2).sum(axis=1, keepdims=True)
        return p * (c**2 - var)

    return kernel, d1, d2


def _validity(family_id: str, params: dict) -> tuple[float, float]:
    if family_id in ("flip", "tilted"):
        return 0.0, 1.0
    if family_id == "logistic3":
        return -np.inf, np.inf
    return tuple(params["omega_valid"])


def make_family(family_id: str, theta0: float, omega: tuple[float, float], **params) -> ParamFamily:
    """Build one of the shipped families.

    ``flip``: ``[[1-θ, θ], [θ, 1-θ]]``; ``tilted``: ``[[1-θ, θ], [c, 1-c]]``
    (``c`` defaults to 0.2); ``logistic3``: rows ``softmax(A_i + θ B_i)``;
    ``affine``: ``A + θ B`` (pass ``A`` and ``B``).
    """
    lo, hi = float(omega[0]), float(omega[1])
    if family_id == "flip":
        kernel = lambda t: np.array([[1 - t, t], [t, 1 - t]])
        d1 = lambda t: np.array([[-1.0, 1.0], [1.0, -1.0]])
        d2 = lambda t: np.zeros((2, 2))
    elif family_id == "tilted":
        c = float(params.setdefault("c", 0.2))
        if not 0 < c < 1:
            raise ParamOutOfRange("tilted family needs 0 < c < 1")
        kernel = lambda t: np.array([[1 - t, t], [c, 1 - c]])
        d1 = lambda t: np.array([[-1.0, 1.0], [0.0, 0.0]])
        d2 = lambda t: np.zeros((2, 2))
    elif family_id == "logistic3":
        base = np.asarray(params.setdefault("A", LOGISTIC3_BASE), float)
        slope = np.asarray(params.setdefault("B", LOGISTIC3_SLOPE), float)
        kernel, d1, d2 = _logistic(base, slope)
    elif family_id == "affine":
        a = np.asarray(params["A"], float)
        b = np.asarray(params["B"], float)
        if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch("affine family needs square A and B of equal shape")
        if np.max(np.abs(b.sum(axis=1))) > 1e-10:
            raise ParamOutOfRange("rows of B must sum to zero")
        params["A"], params["B"] = a, b
        params.setdefault("omega_valid", (lo, hi))
        kernel = lambda t: a + t * b
        d1 = lambda t: b
        d2 = lambda t: np.zeros_like(b)
    else:
        raise ParamOutOfRange(f"unknown family {family_id!r}; choose from {FAMILIES}")
    vlo, vhi = _validity(family_id, params)
    if not (vlo <= lo < hi <= vhi):
        raise ParamOutOfRange(f"Ω=({lo}, {hi}) leaves the validity region ({vlo}, {vhi}) of {family_id}")
    fam = ParamFamily(family_id, float(theta0), (lo, hi), kernel, d1, d2, params)
    fam.check(theta0)
    for t in np.linspace(lo, hi, 27)[1:-1]:
        primitivity_exponent(fam.kernel_at(t))
    return fam


def affine_family(A, B, omega, theta0) -> ParamFamily:
    return make_family("affine", theta0, omega, A=A, B=B)


def load_affine_family(obj: dict) -> ParamFamily:
    """Family from ``{"A": [[...]], "B": [[...]], "omega": [lo, hi], "theta0": t}``."""
    try:
        return affine_family(obj["A"], obj["B"], obj["omega"], obj["theta0"])
    except KeyError as exc:
        raise DimensionMismatch(f"affine family JSON lacks field {exc}") from None


def iid_family(theta0: float, omega=(0.05, 0.95)) -> ParamFamily:
    """Two-state family whose rows coincide, so Y (and Z) are i.i.d."""
    return affine_family([[1.0, 0.0], [1.0, 0.0]], [[-1.0, 1.0], [-1.0, 1.0]], omega, theta0)


def constant_family(delta, omega=(-1.0, 1.0), theta0: float = 0.0) -> ParamFamily:
    """A family that does not depend on θ at all (zero score)."""
    d = np.asarray(delta, float)
    return affine_family(d, np.zeros_like(d), omega, theta0)


def stationary_derivs(fam: ParamFamily, theta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stationary law π^θ and its first two θ-derivatives."""
    return _stationary_derivs(fam.kernel_at(theta).rows, fam.kernel_d1_at(theta), fam.kernel_d2_at(theta))


def _stationary_derivs(d0, d1, d2):
    n = d0.shape[0]
    a = (np.eye(n) - d0).T
    a[-1, :] = 1.0

    def solve(rhs_row):
        rhs = np.array(rhs_row, float)
        rhs[-1] = 0.0
        return np.linalg.solve(a, rhs)

    e = np.zeros(n)
    e[-1] = 1.0
    p0 = np.linalg.solve(a, e)
    p1 = solve(p0 @ d1)
    p2 = solve(2 * p1 @ d1 + p0 @ d2)
    return p0, p1, p2


@dataclass
class DerivForwardState:
    """Filter state at time ``t``.

    ``v0`` is the normalized forward vector; ``v1``/``v2`` are the θ-derivatives
    of the unnormalized forward vector divided by its mass.
    """

    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    logp: float
    d1_logp: float
    d2_logp: float
    t: int


class DerivModel:
    """Everything needed to evaluate ``D^l log p^θ`` for one ``(family, channel, θ)``."""

    def __init__(self, fam: ParamFamily, channel: EmissionChannel, theta: float, order: int = 2):
        if not 0 <= order <= 2:
            raise ValueError("order must be 0, 1 or 2")
        if not isinstance(channel, EmissionChannel):
            channel = validate_channel(channel)
        self.fam, self.channel, self.order = fam, channel, int(order)
        self.theta = fam.check(theta)
        self.hmm: HmmSpec = build_hmm(fam.kernel_at(self.theta), channel)
        self.d0 = np.ascontiguousarray(self.hmm.kernel.rows)
        self.d1 = np.ascontiguousarray(fam.kernel_d1_at(theta))
        self.d2 = np.ascontiguousarray(fam.kernel_d2_at(theta))
        self.emit = np.ascontiguousarray(channel.emit)
        self.pi0, self.pi1, self.pi2 = _stationary_derivs(self.d0, self.d1, self.d2)

    def filter(self) -> "DerivFilter":
        return DerivFilter(self)


class DerivFilter:
    """Resumable derivative forward filter (compiled inner loop)."""

    def __init__(self, model: DerivModel):
        self.m = model
        self.v0 = model.pi0.copy()
        self.w1 = model.pi1.copy()
        self.w2 = model.pi2.copy()
        self.acc = np.zeros(3)
        self.comp = np.zeros(3)
        self.t = 0

    def advance(self, z: np.ndarray, per_step: bool = False) -> np.ndarray | None:
        z = np.ascontiguousarray(z, dtype=np.int64)
        steps = np.empty((z.size, 3)) if per_step else np.empty((0, 3))
        m = self.m
        _kernels.deriv_filter(m.d0, m.d1, m.d2, m.emit, z, m.order, self.v0, self.w1, self.w2,
                              self.acc, self.comp, steps, per_step)
        self.t += z.size
        return steps if per_step else None

    @property
    def state(self) -> DerivForwardState:
        # α = |α| v0 gives α'/|α| = w1 + v0 (log|α|)' and
        # α''/|α| = w2 + 2 w1 (log|α|)' + v0 ((log|α|)'' + (log|α|)'^2)
        g1, g2 = float(self.acc[1]), float(self.acc[2])
        v1 = self.w1 + self.v0 * g1
        v2 = self.w2 + 2 * self.w1 * g1 + self.v0 * (g2 + g1 * g1)
        if self.m.order < 2:
            v2 = np.zeros_like(v2)
        if self.m.order < 1:
            v1 = np.zeros_like(v1)
        return DerivForwardState(self.v0.copy(), v1, v2, float(self.acc[0]), g1, g2, self.t)


@dataclass(frozen=True, eq=False)
class LogLikDerivs:
    n: int
    value: float
    d1: float
    d2: float
    per_step: np.ndarray | None = None  # (n, 3): value, d1, d2 increments


def logp_derivs(fam: ParamFamily, channel, theta: float, z_seq, order: int = 2,
                per_step: bool = False, model: DerivModel | None = None) -> LogLikDerivs:
    """``D^l_θ log p^θ(z_1^n)`` for ``l = 0..order`` (higher orders are returned as 0)."""
    if model is None:
        model = DerivModel(fam, channel, theta, order)
    z = _check_symbols(model.hmm, z_seq)
    if z.size == 0:
        raise ValueError("z_seq must be nonempty")
    filt = model.filter()
    steps = filt.advance(z, per_step)
    return LogLikDerivs(int(z.size), float(filt.acc[0]), float(filt.acc[1]), float(filt.acc[2]), steps)


def deriv_forgetting_gap(fam: ParamFamily, channel, theta: float, order: int, window: int,
                         samples: int = 200, seed: int = 0, prefix_len: int = 30):
    """Forgetting of the order-``l`` per-symbol increment, fitted as ``C ρ^w``.

    Histories are drawn exactly as in :func:`hmm_model.conditional_tail_gap`
    (same seed, same pairs), so order 0 reproduces its log-scale gap.
    """
    from .hmm_model import TailGapResult

    model = DerivModel(fam, channel, theta, max(order, 0))
    ws = np.arange(1, window + 1)
    gaps = np.empty(window)
    for k, w in enumerate(ws):
        a, b = history_pairs(model.hmm, int(w), samples, seed, prefix_len)
        diff = 0.0
        for ra, rb in zip(a, b):
            fa = model.filter().advance(ra, per_step=True)[-1, order]
            fb = model.filter().advance(rb, per_step=True)[-1, order]
            diff = max(diff, abs(fa - fb))
        gaps[k] = diff
    c, rho, degenerate = fitting.fit_exponential(ws, gaps)
    return TailGapResult(ws, gaps, c, rho, degenerate)


@dataclass(frozen=True)
class LEstimate:
    order: int
    theta: float
    n: int
    reps: int
    value: float
    stderr: float
    samples: np.ndarray

    def to_dict(self) -> dict:
        return {"order": self.order, "theta": self.theta, "n": self.n, "reps": self.reps,
                "value": self.value, "stderr": self.stderr}


def simulate_at_theta0(fam: ParamFamily, channel, length: int, gen: np.random.Generator) -> np.ndarray:
    h = build_hmm(fam.kernel_at(fam.theta0), channel)
    return simulate_hmm(h, length, gen)[1]


def batch_totals(model: DerivModel, source: HmmSpec, n_grid, reps: int, seed: int,
                 purpose: int = rng.MAIN) -> np.ndarray:
    """``D^order log p^θ(Z_1^n)`` at each grid ``n`` for ``reps`` paths drawn from ``source``.

    Returns an array of shape ``(reps, len(n_grid))``. Paths are simulated and
    filtered in one compiled pass, batch by batch (see
    :func:`rng.replica_batches`).
    """
    grid = np.asarray(n_grid, dtype=np.int64)
    if grid.size == 0 or grid[0] < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("n_grid must be positive and increasing")
    n = int(grid[-1])
    cum_pi, cum_d = cumulative(source.pi.probs), cumulative(source.kernel.rows)
    cum_e = cumulative(source.channel.emit)
    out = np.empty((reps, grid.size))
    batches = rng.replica_batches(reps, n)

    def run(i):
        b, lo, hi = batches[i]
        u = rng.stream(seed, purpose, b).random((hi - lo, n, 2))
        _kernels.batch_checkpoints(cum_pi, cum_d, cum_e, u, model.d0, model.d1, model.d2, model.emit,
                                   model.order, model.pi0, model.pi1, model.pi2, grid, out[lo:hi])

    rng.replica_map(run, len(batches))
    return out


def estimate_L(fam: ParamFamily, channel, theta: float, order: int, n: int, reps: int,
               seed: int) -> LEstimate:
    """Monte Carlo ``E_θ0[D^l log p^θ(Z_1^n)] / n`` with its standard error."""
    if n < 100:
        raise ValueError("n must be >= 100")
    model = DerivModel(fam, channel, theta, order)
    source = build_hmm(fam.kernel_at(fam.theta0), channel)
    vals = batch_totals(model, source, [n], reps, seed)[:, 0] / n
    se = float(vals.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return LEstimate(order, float(theta), n, reps, float(vals.mean()), se, vals)


def expected_rate(fam: ParamFamily, channel, theta: float, order: int, n: int, reps: int,
                  seed: int, purpose: int = rng.PILOT) -> LEstimate:
    """Low-variance estimate of ``L^(l)(θ)``.

    Each step contributes the predictive expectation
    ``Σ_z p_θ0(z | past) D^l log p^θ(z | past)`` instead of the realized
    increment; the average has the same limit with far smaller variance.
    """
    model = DerivModel(fam, channel, theta, order)
    true_hmm = build_hmm(fam.kernel_at(fam.theta0), channel)
    true_delta = np.ascontiguousarray(true_hmm.kernel.rows)

    def one(r):
        _, z = simulate_hmm(true_hmm, n, rng.stream(seed, purpose, r))
        v0, w1, w2 = model.pi0.copy(), model.pi1.copy(), model.pi2.copy()
        vt = true_hmm.pi.probs.copy()
        acc, comp = np.zeros(3), np.zeros(3)
        _kernels.expected_increments(model.d0, model.d1, model.d2, model.emit, true_delta, z,
                                     model.order, v0, w1, w2, vt, acc, comp)
        return acc[order] / n

    vals = np.array(rng.replica_map(one, reps))
    se = float(vals.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return LEstimate(order, float(theta), n, reps, float(vals.mean()), se, vals)
