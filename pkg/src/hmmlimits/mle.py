"""Maximum likelihood for a scalar θ and the convergence-rate experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fitting, rng
from .config import ExperimentConfig
from .deriv_engine import DerivModel, ParamFamily, expected_rate, logp_derivs
from .errors import HessianDegenerate, RangeError, TooShort
from .hmm_model import _check_symbols, all_sequences, build_hmm, sequence_log_probs, simulate_hmm

GRID_POINTS = 41
GOLDEN_TOL = 1e-5
STEP_TOL = 1e-9
SCORE_TOL = 1e-6  # per symbol
MAX_NEWTON = 50
MIN_LENGTH = 50
L2_MIN = 0.05
_INVPHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class MleResult:
    theta_hat: float
    loglik_at_hat: float
    d1_at_hat: float
    d2_at_hat: float
    iterations: int
    converged: bool
    boundary: bool
    n: int
    evaluations: int

    @property
    def concave(self) -> bool:
        return self.d2_at_hat < 0

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat, "loglik_at_hat": self.loglik_at_hat, "d1_at_hat": self.d1_at_hat,
                "d2_at_hat": self.d2_at_hat, "iterations": self.iterations, "converged": self.converged,
                "boundary": self.boundary, "concave": self.concave, "n": self.n, "evaluations": self.evaluations}


class _Objective:
    def __init__(self, fam, channel, z):
        self.fam, self.channel, self.z = fam, channel, z
        self.calls = 0

    def __call__(self, theta: float, order: int = 0):
        self.calls += 1
        model = DerivModel(self.fam, self.channel, theta, order)
        return logp_derivs(self.fam, self.channel, theta, self.z, order, model=model)


def fit_mle(fam: ParamFamily, channel, z_seq, omega0) -> MleResult:
    """``argmax_{θ ∈ Ω0} log p^θ(z)`` by a 41-point grid, golden section, then Newton.

    A maximizer on an endpoint of ``Ω0`` sets ``boundary`` (not an error);
    ``concave`` on the result reports the sign of the second derivative.
    """
    lo, hi = float(omega0[0]), float(omega0[1])
    wlo, whi = fam.omega
    if not wlo < lo < hi < whi:
        raise RangeError(f"omega0=({lo}, {hi}) must lie inside Ω=({wlo}, {whi})")
    model0 = DerivModel(fam, channel, fam.theta0, 0)
    z = _check_symbols(model0.hmm, z_seq)
    n = int(z.size)
    if n < MIN_LENGTH:
        raise TooShort(f"need at least {MIN_LENGTH} symbols, got {n}")
    f = _Objective(fam, channel, z)

    grid = np.linspace(lo, hi, GRID_POINTS)
    vals = np.array([f(t).value for t in grid])
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]

    # golden section on the bracket around the best grid point
    c, d = b - _INVPHI * (b - a), a + _INVPHI * (b - a)
    fc, fd = f(c).value, f(d).value
    while b - a > GOLDEN_TOL:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c).value
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d).value
    theta = 0.5 * (a + b)
    blo, bhi = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]

    # Newton refinement inside the bracket (at least one step)
    res = f(theta, 2)
    iters, converged = 0, False
    while not converged and iters < MAX_NEWTON:
        if res.d2 >= 0:
            break
        step = -res.d1 / res.d2
        new = min(max(theta + step, blo), bhi)
        iters += 1
        res_new = f(new, 2)
        moved = abs(new - theta)
        theta, res = new, res_new
        converged = moved <= STEP_TOL or abs(res.d1) <= SCORE_TOL * n
        if moved == 0:
            break

    boundary = False
    for end, outward in ((lo, -1.0), (hi, 1.0)):
        if abs(theta - end) <= 10 * GOLDEN_TOL and res.d1 * outward > 0:
            theta, boundary = end, True
            res = f(theta, 2)
            converged = True
    return MleResult(float(theta), res.value, res.d1, res.d2, iters, bool(converged), boundary, n, f.calls)


def brute_argmax(fam: ParamFamily, channel, z_seq, omega0, points: int = 100_000) -> float:
    """Grid argmax of the log-likelihood, all grid points filtered at once in numpy."""
    ts = np.linspace(omega0[0], omega0[1], points)
    ks = np.array([fam.kernel_fn(t) for t in ts])
    emit = np.asarray(channel.emit if hasattr(channel, "emit") else channel, float)
    s = ks.shape[1]
    a = np.transpose(np.eye(s)[None] - ks, (0, 2, 1)).copy()
    a[:, -1, :] = 1.0
    rhs = np.zeros((points, s, 1))
    rhs[:, -1, 0] = 1.0
    v = np.linalg.solve(a, rhs)[..., 0]
    ll = np.zeros(points)
    for zt in np.asarray(z_seq, dtype=np.int64):
        u = np.einsum("gi,gij->gj", v, ks) * emit[:, zt][None, :]
        c = u.sum(axis=1)
        ll += np.log(c)
        v = u / c[:, None]
    return float(ts[int(np.argmax(ll))])


def count_estimate_flip(y) -> float:
    """Closed-form MLE of the flip probability from an observed two-state path.

    The stationary law of the flip chain is uniform for every θ, so the
    likelihood is ``θ^k (1-θ)^(n-1-k)`` with ``k`` the number of switches.
    """
    y = np.asarray(y)
    return float(np.mean(y[1:] != y[:-1]))


def score_identity_check(fam: ParamFamily, channel, n: int, theta: float | None = None) -> float:
    """``|E_θ0[D_θ log p^θ(Z_1^n)]|`` by enumerating every word of length ``n``."""
    if n > 12:
        raise ValueError("enumeration limited to n <= 12")
    theta = fam.theta0 if theta is None else theta
    src = build_hmm(fam.kernel_at(fam.theta0), channel)
    seqs = all_sequences(src.n_symbols, n)
    w = np.exp(sequence_log_probs(src, seqs))
    model = DerivModel(fam, channel, theta, 1)
    scores = np.array([logp_derivs(fam, channel, theta, s, 1, model=model).d1 for s in seqs])
    return float(abs(w @ scores))


@dataclass(frozen=True)
class RateCurve:
    x: float
    n_grid: np.ndarray
    p_hat: np.ndarray
    stderr: np.ndarray
    reps: np.ndarray
    excluded_fraction: np.ndarray

    def verdict(self) -> dict:
        p, se = self.p_hat, self.stderr
        return {"nonincreasing_within_2se": bool(np.all(p[1:] <= p[:-1] + 2 * np.hypot(se[1:], se[:-1]))),
                "last_below_first": bool(p[-1] < p[0])}

    def rows(self):
        return [(int(n), self.x, float(p), float(s), int(r), float(e))
                for n, p, s, r, e in zip(self.n_grid, self.p_hat, self.stderr, self.reps, self.excluded_fraction)]

    def to_dict(self) -> dict:
        return {"x": self.x, "n_grid": self.n_grid.tolist(), "p_hat": self.p_hat.tolist(),
                "stderr": self.stderr.tolist(), "reps": self.reps.tolist(),
                "excluded_fraction": self.excluded_fraction.tolist(), "verdict": self.verdict()}


@dataclass(frozen=True)
class RateExperiment:
    curves: list
    n_grid: np.ndarray
    median_error: np.ndarray
    median_slope: fitting.Band
    l2: float
    l2_stderr: float
    omega0: tuple
    theta_hats: np.ndarray  # (len(n_grid), reps), NaN where excluded

    def verdict(self) -> dict:
        out = {f"x={c.x}": c.verdict() for c in self.curves}
        out["median_slope_band_within_-0.65_-0.35"] = self.median_slope.within(-0.65, -0.35)
        return out

    def to_dict(self) -> dict:
        return {"curves": [c.to_dict() for c in self.curves], "n_grid": self.n_grid.tolist(),
                "median_error": self.median_error.tolist(), "median_slope": self.median_slope.to_dict(),
                "l2": self.l2, "l2_stderr": self.l2_stderr, "omega0": list(self.omega0)}

    def tables(self) -> dict:
        rows = [r for c in self.curves for r in c.rows()]
        return {"rate": (["n", "x", "p_hat", "stderr", "reps", "excluded_fraction"], [list(r) for r in rows]),
                "median_error": (["n", "median_abs_error"],
                                 [[int(n), float(m)] for n, m in zip(self.n_grid, self.median_error)])}


def default_omega0(fam: ParamFamily) -> tuple[float, float]:
    lo, hi = fam.omega
    w = hi - lo
    return lo + 0.1 * w, hi - 0.1 * w


def fit_path(cfg: ExperimentConfig, n: int, replica: int, omega0) -> MleResult:
    """Fit one path of length ``n`` simulated at θ0 from the stream for ``(replica, n)``."""
    fam, ch = cfg.family_obj(), cfg.channel()
    h = cfg.source_hmm()
    z = simulate_hmm(h, n, rng.stream(cfg.seed, rng.MAIN, replica, n))[1]
    return fit_mle(fam, ch, z, omega0)


def run_rate_experiment(cfg: ExperimentConfig, x_list=None) -> RateExperiment:
    """Exceedance ``P(|θ_n - θ0| >= x)`` over independent fits at each grid ``n``.

    Fits that end on the boundary of Ω0 are excluded and their fraction is
    reported. Refuses to run when the limiting Hessian ``L^(2)(θ0)`` is
    close to singular.
    """
    fam, ch = cfg.family_obj(), cfg.channel()
    xs = list(cfg.x if x_list is None else x_list) or [0.05]
    omega0 = cfg.omega0 or default_omega0(fam)
    if not omega0[0] < fam.theta0 < omega0[1]:
        raise RangeError(f"omega0={list(omega0)} must contain theta0={fam.theta0}")
    l2 = expected_rate(fam, ch, fam.theta0, 2, 62_500, 16, cfg.seed)
    if abs(l2.value) < L2_MIN:
        raise HessianDegenerate(f"|L2(theta0)| = {abs(l2.value):.3g} < {L2_MIN}")
    grid = np.asarray(cfg.n_grid or (1000, 2000, 5000, 10_000), dtype=np.int64)
    hats = np.full((grid.size, cfg.reps), np.nan)
    for k, n in enumerate(grid):
        fits = rng.replica_map(lambda r: fit_path(cfg, int(n), r, omega0), cfg.reps)
        for r, res in enumerate(fits):
            if not res.boundary:
                hats[k, r] = res.theta_hat
    err = np.abs(hats - fam.theta0)
    kept = np.isfinite(err).sum(axis=1)
    excl = 1 - kept / cfg.reps
    curves = []
    for x in xs:
        p = np.array([np.mean(e[np.isfinite(e)] >= x) for e in err])
        curves.append(RateCurve(float(x), grid, p, np.sqrt(p * (1 - p) / kept), kept, excl))
    med = np.array([np.median(e[np.isfinite(e)]) for e in err])
    logn = np.log(grid.astype(float))
    gen = rng.stream(cfg.seed, rng.BOOTSTRAP)
    finite = [e[np.isfinite(e)] for e in err]

    def boot(g):
        m = [np.median(e[g.integers(0, e.size, e.size)]) for e in finite]
        return fitting.ols(logn, np.log(m))[0] if min(m) > 0 else float("nan")

    est = fitting.ols(logn, np.log(med))[0] if np.all(med > 0) else float("nan")
    band = fitting.bootstrap_band(boot, est, gen)
    return RateExperiment(curves, grid, med, band, l2.value, l2.stderr, tuple(omega0), hats)
