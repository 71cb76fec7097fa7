import itertools
import math

import numpy as np
import pytest
from scipy import stats

from hmmlimits import deriv_engine as de
from hmmlimits import hmm_model as hm
from hmmlimits import theorem_lab as tl
from hmmlimits.config import config_for
from hmmlimits.errors import CylinderTooLong, DegenerateVariance
from hmmlimits.markov_core import validate_kernel


@pytest.fixture(scope="module")
def cfg(flip, bsc):
    return config_for(flip, bsc, "clt", reps=1000, seed=3)


def test_lil_ratio_formula():
    n = np.array([1000.0, 10_000.0])
    r = tl.lil_ratio(np.array([10.0, 10.0]), n, 2.0)
    np.testing.assert_allclose(r, 10 / np.sqrt(2 * n * 2 * np.log(np.log(2 * n))))
    # doubling σ² also moves the log log term, so the ratio is not exactly 1/√2
    ratio = tl.lil_ratio(np.array([5.0]), n[:1], 4.0) / tl.lil_ratio(np.array([5.0]), n[:1], 2.0)
    expected = math.sqrt(math.log(math.log(2000)) / (2 * math.log(math.log(4000))))
    assert ratio[0] == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        tl.lil_ratio(np.array([1.0]), np.array([2.0]), 1.0)


def test_fit_subexponential_recovers_known_tail():
    ns = np.array([200, 500, 1000, 2000, 5000])
    for gamma, eps in ((0.99, 0.2), (0.995, 0.0), (0.9, 0.5)):
        p = 0.3 * gamma ** (ns ** (1 - eps))
        g, e = tl.fit_subexponential(ns, p)
        assert e == pytest.approx(eps, abs=1e-9)
        assert g == pytest.approx(gamma, rel=1e-9)


def test_ks_matches_scipy():
    g = np.random.default_rng(0)
    x = np.sort(g.normal(size=500))
    cdf = stats.norm.cdf(x)
    assert tl._ks_from_sorted(cdf) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-14)
    counts = np.bincount(g.integers(0, 500, 500), minlength=500)
    expanded = np.repeat(x, counts)
    assert tl._ks_from_sorted(cdf, counts) == pytest.approx(stats.kstest(expanded, "norm").statistic, abs=1e-14)


def _psi_oracle(h, n, max_len):
    """ψ̂(n) from joint word probabilities, summing over the gap explicitly."""
    words = [w for l in range(1, max_len + 1) for w in itertools.product(range(h.n_symbols), repeat=l)]
    best = 0.0
    for u in words:
        pu = hm.exact_sequence_prob(h, u)
        for v in words:
            pv = hm.exact_sequence_prob(h, v)
            joint = sum(hm.exact_sequence_prob(h, u + gap + v)
                        for gap in itertools.product(range(h.n_symbols), repeat=n - 1))
            best = max(best, abs(joint / (pu * pv) - 1))
    return best


def test_psi_matches_joint_enumeration(canonical):
    h3 = hm.build_hmm([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]], hm.smoothed_identity(3, 0.2))
    for h in (canonical, h3):
        prof = tl.psi_mixing_profile(h, [1, 2, 3], cylinder_len=2)
        for n, val in zip([1, 2, 3], prof.psi):
            assert val == pytest.approx(_psi_oracle(h, n, 2), rel=1e-10)


def test_psi_profile_properties(canonical, flip):
    prof = tl.psi_mixing_profile(canonical, range(1, 9))
    assert prof.strictly_decreasing
    assert prof.rate.estimate == pytest.approx(0.4, abs=1e-9)
    assert all(prof.verdict().values())
    shorter = tl.psi_mixing_profile(canonical, range(1, 9), cylinder_len=1)
    assert np.all(shorter.psi <= prof.psi + 1e-15)
    iid = hm.build_hmm(de.iid_family(0.3).kernel_at(0.3), hm.bsc(0.1))
    assert np.all(tl.psi_mixing_profile(iid, [1, 2, 3]).psi <= 1e-14)
    np.testing.assert_allclose(tl.markov_psi(flip.kernel_at(0.3), [1, 2, 5]), 0.4 ** np.array([1, 2, 5]), rtol=1e-12)
    with pytest.raises(CylinderTooLong):
        tl.psi_mixing_profile(canonical, [1, 2], cylinder_len=5)
    four = hm.build_hmm(np.full((2, 2), 0.5), np.full((2, 4), 0.25))
    with pytest.raises(CylinderTooLong):
        tl.psi_mixing_profile(four, [1, 2])


def test_classify_growth_synthetic():
    grid = np.array([10, 100, 1000, 10_000])
    se = np.full(4, 0.01)
    flat = tl.classify_growth(grid, np.array([0.5, 0.51, 0.49, 0.5]), se)
    assert flat.classification == "bounded"
    lin = tl.classify_growth(grid, 0.07 * grid + 0.1, se * grid)
    assert lin.classification == "linear-growth"
    assert lin.slope == pytest.approx(0.07, rel=0.05)


def test_coboundary_sums_are_bounded(canonical):
    s = tl.coboundary_sums(canonical, [0.0, 1.0], [1, 10, 100], 200, seed=0)
    assert s.shape == (200, 3)
    assert set(np.unique(s)) <= {-1.0, 0.0, 1.0}


def test_dichotomy_guards(cfg):
    with pytest.raises(ValueError):
        tl.variance_dichotomy(cfg.replace(command="dichotomy", n_grid=[10, 100]))
    with pytest.raises(ValueError):
        tl.variance_dichotomy(cfg.replace(command="dichotomy", source="coboundary", g=[1.0, 2.0, 3.0]))


def test_degenerate_variance_is_refused(cfg):
    with pytest.raises(DegenerateVariance):
        tl.run_clt(cfg.replace(sigma2=0.001))


def test_chernoff_guards_and_bound(cfg, flip, bsc):
    with pytest.raises(ValueError):
        tl.run_chernoff(cfg.replace(command="chernoff"), x=-0.1)
    ctx = cfg.context(1)
    assert tl.increment_bound(ctx, 0.0) is None
    ctx0 = cfg.context(0)
    lo, hi = hm.cond_prob_bounds(ctx0.eval.hmm)
    assert tl.increment_bound(ctx0, -0.66) == pytest.approx(math.log(hi) + 0.66)


def test_chernoff_report_shape(cfg):
    rep = tl.run_chernoff(cfg.replace(command="chernoff", reps=2000, n_grid=[100, 300, 1000]), x=0.05)[0]
    assert rep.exceed.shape == (3,)
    assert rep.p_hat[-1] <= rep.p_hat[0]
    assert all(lo <= p <= hi for p, (lo, hi) in zip(rep.p_hat, rep.cp_bounds()))
    assert rep.to_dict()["increment_bound"] == rep.bound


def test_lln_small_run(cfg):
    rep = tl.run_lln(cfg.replace(command="lln", reps=200, n_grid=[100, 1000, 10_000]))
    assert rep.decreasing
    assert rep.exponent.within(-0.7, -0.3)


def test_forgetting_on_canonical(cfg):
    rep = tl.run_forgetting(cfg.replace(command="forgetting", samples=40))
    assert all(rep.verdict().values())
    assert rep.conditional.rho <= rep.lambda2 + 0.1


def test_entropy_report_ci(flip):
    ch = hm.smoothed_identity(2, 1e-6)
    rep = tl.run_entropy(config_for(flip, ch, "entropy", n=20_000, reps=16, seed=1))
    lo, hi = rep.ci
    assert lo <= rep.markov_entropy <= hi
    assert rep.markov_entropy == pytest.approx(-(0.7 * math.log(0.7) + 0.3 * math.log(0.3)))


def test_small_lil_run():
    fam = de.iid_family(0.5)
    c = config_for(fam, hm.bsc(0.1), "lil", order=1, reps=4, n=20_000, seed=5)
    rep = tl.run_lil(c)
    assert rep.counts()["trajectories"] == 4
    for p in rep.paths:
        assert np.all(np.diff(p.running_max_abs) >= 0)
        assert np.all(p.running_max <= p.running_max_abs)
        assert p.n_grid[-1] == 20_000
    assert rep.sigma2 == pytest.approx(2.56, rel=0.05)
