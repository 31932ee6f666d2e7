"""Radial-angular split, EL tilt, Anderson-Darling, and the full test."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import kstest

from stmaxstab import (GridPanel, ad_gumbel, derived_rng, empirical_frechet,
                       max_stability_test, radial_angular, select_validation,
                       simulate_logistic, tilt_weights)


def test_empirical_frechet_is_rank_based():
    rng = derived_rng(51)
    x = rng.normal(size=(50, 3))
    z = empirical_frechet(x)
    assert (z > 0).all()
    # strictly increasing in the data, columnwise
    for j in range(3):
        order = np.argsort(x[:, j])
        assert (np.diff(z[order, j]) > 0).all()
    # largest value maps to -1/log(n/(n+1))
    assert abs(z[:, 0].max() + 1.0 / math.log(50 / 51.0)) < 1e-12
    with pytest.raises(ValueError, match="complete"):
        empirical_frechet(np.array([[1.0, np.nan], [2.0, 3.0]]))


def test_radial_angular_algebra():
    rng = derived_rng(52)
    z = 1.0 / rng.standard_exponential((1000, 4))
    R, W, r0 = radial_angular(z, p=0.9)
    assert R.shape == (100,)            # strict 10% above the 0.9 quantile
    assert (R > r0).all()
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)
    # rows reconstruct: z = R * W for the retained rows
    keep = z.sum(axis=1) > r0
    assert np.allclose(W * R[:, None], z[keep], rtol=1e-12)


def test_radial_angular_validation():
    rng = derived_rng(53)
    z = 1.0 / rng.standard_exponential((30, 3))
    with pytest.raises(ValueError, match="p must be"):
        radial_angular(z, p=1.5)
    with pytest.raises(ValueError, match="positive"):
        radial_angular(np.zeros((30, 3)), p=0.5)
    with pytest.raises(ValueError, match="need at least"):
        radial_angular(z, p=0.95)       # keeps one row, D+1 = 4 needed


def test_tilt_is_uniform_when_constraint_already_holds():
    # cyclic shifts of one simplex vector have column means exactly 1/D
    w = np.array([0.5, 0.3, 0.15, 0.05])
    W = np.array([np.roll(w, k) for k in range(4)] * 3)
    R = np.full(12, 8.0)
    t = tilt_weights(W, R, constraint="angular")
    assert np.max(np.abs(t.q - 1.0 / 12)) < 1e-12
    assert t.residual < 1e-10
    assert np.max(np.abs(t.multiplier)) < 1e-9


def test_tilt_matches_scalar_dual_in_two_dimensions():
    # D = 2: the dual is one-dimensional and solvable by root finding
    W = np.array([[0.8, 0.2], [0.4, 0.6], [0.3, 0.7], [0.55, 0.45]])
    R = np.full(4, 5.0)
    g = W[:, 0] - 0.5
    f = lambda lam: np.sum(g / (1.0 + lam * g))
    # bracket keeps 1 + lam g_i > 0 for all i
    lo = -1.0 / g.max() + 1e-9
    hi = -1.0 / g.min() - 1e-9
    lam = brentq(f, lo, hi, xtol=1e-14)
    q_ref = 1.0 / (4 * (1.0 + lam * g))
    q_ref /= q_ref.sum()
    t = tilt_weights(W, R, constraint="angular")
    assert np.max(np.abs(t.q - q_ref)) < 1e-8
    assert abs(t.q @ W[:, 0] - 0.5) < 1e-10


def test_tilt_feasible_random_instances():
    rng = derived_rng(54)
    n0, D = 40, 4
    for _ in range(100):
        W = rng.dirichlet(np.ones(D), size=n0)
        W[0] = 1.0 / D          # barycenter atom guarantees feasibility
        R = 1.0 / rng.standard_exponential(n0) + float(D)
        t = tilt_weights(W, R, constraint="angular")
        assert (t.q > 0).all()
        assert abs(t.q.sum() - 1.0) < 1e-12
        assert t.residual <= 1e-8


def test_tilt_validation():
    W = np.array([[0.5, 0.5]] * 5)
    R = np.ones(5)
    with pytest.raises(ValueError, match="unknown constraint"):
        tilt_weights(W, R, constraint="radial")
    with pytest.raises(ValueError, match="at least"):
        tilt_weights(W[:2], R[:2])


def test_tilt_angular_over_radius_infeasible_when_radii_large():
    # with all radii above D, sum q W/R < 1/D for every q: must raise
    rng = derived_rng(55)
    W = rng.dirichlet(np.ones(3), size=20)
    R = 10.0 / rng.uniform(0.5, 1.0, size=20)   # all > 3
    with pytest.raises(ValueError, match="moment constraint"):
        tilt_weights(W, R, constraint="angular_over_radius")


def test_ad_gumbel_small_at_plotting_positions():
    M = 100
    u = (np.arange(1, M + 1) - 0.5) / M
    x = -np.log(-np.log(u))
    a2 = ad_gumbel(x, mu=0.0)
    assert 0.0 < a2 < 0.02
    # translation invariance
    assert abs(ad_gumbel(x + 3.7, mu=3.7) - a2) < 1e-10
    # a gross location error blows the statistic up
    assert ad_gumbel(x + 5.0, mu=0.0) > 100.0


def test_ad_gumbel_clamps_extreme_tails_with_warning():
    x = np.array([-800.0, 0.1, 0.5, 1.0])
    with pytest.warns(RuntimeWarning, match="clamped"):
        a2 = ad_gumbel(x, mu=0.0)
    assert np.isfinite(a2)


def test_ad_gumbel_validation():
    with pytest.raises(ValueError):
        ad_gumbel(np.array([]), mu=0.0)
    with pytest.raises(ValueError):
        ad_gumbel(np.array([1.0, np.nan]), mu=0.0)


def _null_data(seed, M=40, n=600, D=3, lam=0.5):
    maxima = simulate_logistic(lam, D, size=M, seed=derived_rng(seed, 0))
    hf = simulate_logistic(lam, D, size=n, seed=derived_rng(seed, 1))
    return maxima, hf


def test_max_stability_test_validation():
    maxima, hf = _null_data(56)
    with pytest.raises(ValueError, match="B="):
        max_stability_test(maxima, hf, B=0)
    with pytest.raises(ValueError, match="site dimension"):
        max_stability_test(maxima, hf[:, :2], B=5)


def test_max_stability_test_deterministic():
    maxima, hf = _null_data(57)
    r1 = max_stability_test(maxima, hf, B=19, seed=7)
    r2 = max_stability_test(maxima, hf, B=19, seed=7)
    assert r1.stat_obs == r2.stat_obs
    assert r1.p_value == r2.p_value
    assert np.array_equal(r1.null_stats, r2.null_stats)
    assert r1.B_effective <= 19 and r1.B_effective >= 1


def test_max_stability_test_site_order_invariance():
    maxima, hf = _null_data(58)
    perm = np.array([2, 0, 1])
    r1 = max_stability_test(maxima, hf, B=19, seed=3)
    r2 = max_stability_test(maxima[:, perm], hf[:, perm], B=19, seed=3)
    assert abs(r1.stat_obs - r2.stat_obs) < 1e-9
    assert r1.p_value == r2.p_value


def test_max_stability_test_pvalues_near_uniform_under_null():
    ps = []
    for k in range(40):
        maxima, hf = _null_data(900 + k)
        rep = max_stability_test(maxima, hf, B=29, seed=k)
        ps.append(rep.p_value)
    ps = np.array(ps)
    assert kstest(ps, "uniform").pvalue > 0.01
    assert 0.3 < ps.mean() < 0.7


def test_max_stability_test_rejects_non_max_stable_data():
    # equicorrelated Gaussian maxima are not max-stable; with a strongly
    # dependent spectral estimate the observed rowmax statistic is extreme
    rng = derived_rng(59)
    D, M = 3, 80
    zeta = 0.95
    L = np.linalg.cholesky(zeta * np.ones((D, D)) + (1 - zeta) * np.eye(D))
    maxima = (rng.standard_normal((M, D)) @ L.T)
    hf = simulate_logistic(0.3, D, size=800, seed=derived_rng(60))
    rep = max_stability_test(maxima, hf, B=99, seed=11)
    assert rep.p_value <= 0.10


def test_select_validation_runs_cells_and_collects_failures():
    D = 4
    rng = derived_rng(61)
    Tm = 36
    month = np.tile(np.arange(1, 13), Tm // 12)
    maxima = simulate_logistic(0.5, D, size=Tm, seed=derived_rng(62))
    panel = GridPanel(site_ids=np.arange(1, D + 1),
                      lon=np.arange(D, dtype=float), lat=np.zeros(D),
                      t=np.arange(1, Tm + 1), year=1 + (np.arange(Tm)) // 12,
                      month=month, enso=np.zeros(Tm), values=maxima,
                      scale="data")
    n = 240
    hf_month = np.tile(np.arange(1, 13), n // 12)
    hf = simulate_logistic(0.5, D, size=n, seed=derived_rng(63))
    windows = [("west", np.array([True, True, False, False])),
               ("east", np.array([False, False, True, True]))]
    out = select_validation(panel, hf, hf_month, windows, months=(1, 2),
                            B=9, seed=4, min_len=3)
    assert out.n_cells == 4
    assert len(out.reports) + len(out.failures) == 4
    for r in out.reports:
        assert r.window in ("west", "east") and r.month in (1, 2)
        assert 0.0 < r.p_value <= 1.0
    # clearly broken cell: month with no maxima rows at all
    out2 = select_validation(panel, hf, hf_month, windows, months=(13,),
                             B=9, seed=4, min_len=3)
    assert len(out2.failures) == 2 and not out2.reports
