"""Sandwich covariance, CLIC, temporal block bootstrap, basic intervals."""

import csv
import math
import types

import numpy as np
import pytest

from stmaxstab import (Anisotropy, BlockPlan, BootstrapRun, ConstantRange,
                       DependenceConfig, DependenceModel, GridPanel,
                       PairwiseObjective, SandwichResult, TwoStepPipeline,
                       basic_ci, block_bootstrap, clic, clic_b,
                       fit_dependence, make_grid, sandwich, simulate_br_panel)
from stmaxstab.inference import (CI_HEADER, SELECTION_HEADER, cis_to_csv,
                                 selection_to_csv)


def _frechet_panel(values, lon, lat):
    values = np.asarray(values, dtype=float)
    T = values.shape[0]
    t = np.arange(1, T + 1)
    return GridPanel(site_ids=np.arange(1, values.shape[1] + 1),
                     lon=lon, lat=lat, t=t, year=1 + (t - 1) // 12,
                     month=np.where(t % 12 == 0, 12, t % 12),
                     enso=np.zeros(T), values=values, scale="frechet")


@pytest.fixture(scope="module")
def small_fit():
    """3x3 grid, T=40 Frechet panel with a converged one-parameter fit."""
    ids, lon, lat = make_grid(3, 3)
    cfg = DependenceConfig(alpha=1.0, range_model=ConstantRange(rho=1.4),
                           aniso=Anisotropy(ratio=1.0, angle=0.0))
    vals = simulate_br_panel(cfg, np.column_stack([lon, lat]), None, None,
                             T=40, seed=20)
    panel = _frechet_panel(vals, lon, lat)
    model = DependenceModel(cfg, free=("rho",))
    pipe = TwoStepPipeline(model, margins="known", restarts=1)
    return panel, pipe, pipe.fit(panel)


# ---------------------------------------------------------------------------
# sandwich matrices


class _MeanObjective:
    """Gaussian location with unit variance: H and J are known in closed
    form, which pins the finite-difference Hessian and the score product."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)

    def loglik(self, theta):
        return float(-0.5 * np.sum((self.x - theta[0]) ** 2))

    def scores(self, theta):
        return (self.x - theta[0])[:, None]


class _GaussObjective:
    """Correctly specified iid Gaussian in (mu, log sigma)."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)

    def loglik(self, theta):
        mu, logsig = theta
        z = (self.x - mu) / math.exp(logsig)
        return float(np.sum(-0.5 * math.log(2.0 * math.pi) - logsig
                            - 0.5 * z * z))

    def scores(self, theta):
        mu, logsig = theta
        sig = math.exp(logsig)
        z = (self.x - mu) / sig
        return np.column_stack([z / sig, z * z - 1.0])


def _duck_fit(obj, theta, names):
    return types.SimpleNamespace(objective=obj, theta=np.asarray(theta),
                                 scores=np.array([]), names=list(names),
                                 loglik=obj.loglik(np.asarray(theta)))


def test_sandwich_gaussian_mean_analytic():
    rng = np.random.default_rng(7)
    x = rng.normal(2.0, 1.5, size=500)
    fit = _duck_fit(_MeanObjective(x), [x.mean()], ["mu"])
    s = sandwich(fit)
    T = x.size
    j_exact = float(((x - x.mean()) ** 2).sum())
    assert np.isclose(s.H[0, 0], T, rtol=1e-7)
    assert np.isclose(s.J[0, 0], j_exact, rtol=1e-12)
    assert np.isclose(s.cov[0, 0], j_exact / T ** 2, rtol=1e-6)
    assert np.isclose(s.se()[0], x.std() / math.sqrt(T), rtol=1e-6)
    assert not s.used_pinv


def test_sandwich_duplicated_panel_scaling(small_fit):
    # doubling every time point doubles H and J, so cov halves
    panel, pipe, _ = small_fit
    model = DependenceModel(pipe.model.template, free=("rho", "alpha"))
    fit1 = fit_dependence(panel, model, restarts=1)
    T = panel.n_times
    panel2 = GridPanel(site_ids=panel.site_ids, lon=panel.lon, lat=panel.lat,
                       t=np.arange(1, 2 * T + 1),
                       year=np.concatenate([panel.year, panel.year + 100]),
                       month=np.concatenate([panel.month, panel.month]),
                       enso=np.concatenate([panel.enso, panel.enso]),
                       values=np.vstack([panel.values, panel.values]),
                       scale="frechet")
    fit2 = _duck_fit(PairwiseObjective(panel2, model), fit1.theta, fit1.names)
    s1 = sandwich(fit1)
    s2 = sandwich(fit2)
    assert np.allclose(s2.H, 2.0 * s1.H, rtol=1e-5, atol=1e-6)
    assert np.allclose(s2.J, 2.0 * s1.J, rtol=1e-12, atol=1e-10)
    assert np.allclose(s2.cov, 0.5 * s1.cov, rtol=1e-4, atol=1e-10)


def test_clic_penalty_recovers_parameter_count():
    # correctly specified model: tr(J H^-1) should sit near p = 2
    rng = np.random.default_rng(42)
    x = rng.normal(0.7, 2.0, size=4000)
    mu = x.mean()
    sig2 = ((x - mu) ** 2).mean()
    fit = _duck_fit(_GaussObjective(x), [mu, 0.5 * math.log(sig2)],
                    ["mu", "logsig"])
    trace = 0.5 * (clic(fit) + 2.0 * fit.loglik)
    assert abs(trace - 2.0) < 0.2


def test_clic_zero_scores_is_exactly_minus_two_loglik():
    obj = types.SimpleNamespace(loglik=lambda th: float(-0.5 * th[0] ** 2
                                                        - 1.25),
                                scores=lambda th: np.zeros((6, 1)))
    fit = types.SimpleNamespace(objective=obj, theta=np.array([0.0]),
                                scores=np.array([]), names=["x"],
                                loglik=obj.loglik(np.array([0.0])))
    assert clic(fit) == -2.0 * fit.loglik


def test_sandwich_singular_hessian_uses_pinv():
    # second coordinate never enters the objective
    obj = types.SimpleNamespace(loglik=lambda th: float(-0.5 * th[0] ** 2),
                                scores=lambda th: np.zeros((4, 2)))
    fit = types.SimpleNamespace(objective=obj, theta=np.zeros(2),
                                scores=np.array([]), names=["a", "b"],
                                loglik=0.0)
    with pytest.warns(RuntimeWarning, match="pseudo-inverse"):
        s = sandwich(fit)
    assert s.used_pinv
    assert np.allclose(s.cov, 0.0)


def test_sandwich_se_clips_negative_variance():
    s = SandwichResult(H=np.eye(2), J=np.eye(2),
                       cov=np.array([[4.0, 0.0], [0.0, -1e-12]]),
                       names=["a", "b"], used_pinv=False)
    with pytest.warns(RuntimeWarning, match="clipped"):
        se = s.se()
    assert se[0] == 2.0 and se[1] == 0.0


# ---------------------------------------------------------------------------
# block plans


def test_block_plan_iid_is_singletons():
    plan = BlockPlan.iid(5)
    assert plan.n_blocks == 5
    for i, b in enumerate(plan.blocks):
        assert np.array_equal(b, [i])


def test_block_plan_whole_series_resamples_identity():
    plan = BlockPlan.whole_series(13)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert np.array_equal(plan.resample(rng, 13), np.arange(13))


def test_block_plan_by_years_monthly_panel():
    # 37 years of monthly rows, two-year blocks: 18 full + 1 leftover year
    years = np.repeat(np.arange(1960, 1997), 12)
    plan = BlockPlan.by_years(years, block_years=2)
    sizes = [b.size for b in plan.blocks]
    assert plan.n_blocks == 19
    assert sizes == [24] * 18 + [12]
    assert np.array_equal(np.concatenate(plan.blocks), np.arange(444))


def test_block_plan_resample_keeps_blocks_whole():
    blocks = [np.arange(0, 5), np.arange(5, 10), np.arange(10, 15)]
    plan = BlockPlan(blocks=blocks)
    rng = np.random.default_rng(3)
    for _ in range(20):
        idx = plan.resample(rng, 15)
        assert idx.shape == (15,)
        for chunk in idx.reshape(3, 5):
            assert any(np.array_equal(chunk, b) for b in blocks)
    # truncation keeps a prefix of the last drawn block
    idx = plan.resample(rng, 12)
    assert idx.size == 12
    assert any(np.array_equal(idx[10:], b[:2]) for b in blocks)


def test_block_plan_validation():
    with pytest.raises(ValueError, match="at least one block"):
        BlockPlan(blocks=[])
    with pytest.raises(ValueError, match="empty block"):
        BlockPlan(blocks=[np.array([], dtype=int)])
    with pytest.raises(ValueError, match="nondecreasing"):
        BlockPlan.by_years(np.array([3, 2, 1]))


# ---------------------------------------------------------------------------
# bootstrap runs


def test_degenerate_bootstrap_is_exact(small_fit):
    # single whole-series block: every replicate is the base fit, so the
    # criterion collapses to -2 log L with zero bias, exactly
    panel, pipe, base = small_fit
    plan = BlockPlan.whole_series(panel.n_times)
    for B in (1, 2):
        run = block_bootstrap(panel, pipe, plan, B=B, seed=0, base=base)
        assert run.B_effective == B and run.n_dropped == 0
        for th in run.thetas:
            assert np.array_equal(th, base.theta)
        assert (run.logliks_original == base.loglik).all()
        val, bias = clic_b(run)
        assert val == -2.0 * base.loglik
        assert bias == 0.0
    run3 = block_bootstrap(panel, pipe, plan, B=3, seed=0, base=base)
    val3, bias3 = clic_b(run3)
    assert math.isclose(val3, -2.0 * base.loglik, rel_tol=1e-14)
    assert bias3 == 0.0


def test_block_bootstrap_deterministic(small_fit):
    panel, pipe, base = small_fit
    plan = BlockPlan.iid(panel.n_times)
    r1 = block_bootstrap(panel, pipe, plan, B=3, seed=5, base=base)
    r2 = block_bootstrap(panel, pipe, plan, B=3, seed=5, base=base)
    assert np.array_equal(r1.thetas, r2.thetas)
    assert np.array_equal(r1.logliks_original, r2.logliks_original)
    r3 = block_bootstrap(panel, pipe, plan, B=3, seed=6, base=base)
    assert not np.array_equal(r1.thetas, r3.thetas)
    # replicates re-scored on the original data cannot beat its optimum
    assert (r1.logliks_original <= base.loglik + 1e-6).all()
    val, bias = clic_b(r1)
    assert val >= -2.0 * base.loglik - 1e-6
    assert bias <= 1e-6


def test_block_bootstrap_drop_accounting(small_fit):
    panel, pipe, base = small_fit
    plan = BlockPlan.iid(panel.n_times)
    calls = {"n": 0}

    def flaky(rep_panel, init):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ValueError("boom")
        return pipe.fit_replicate(rep_panel, init=init)

    duck = types.SimpleNamespace(fit_replicate=flaky)
    run = block_bootstrap(panel, duck, plan, B=10, seed=2, base=base)
    assert run.n_dropped == 1
    assert run.B_effective == 9

    def broken(rep_panel, init):
        raise ValueError("boom")

    duck = types.SimpleNamespace(fit_replicate=broken)
    with pytest.raises(RuntimeError, match="bootstrap failed"):
        block_bootstrap(panel, duck, plan, B=5, seed=2, base=base)


def test_block_bootstrap_validation(small_fit):
    panel, pipe, base = small_fit
    plan = BlockPlan.iid(panel.n_times)
    with pytest.raises(ValueError, match="at least one replicate"):
        block_bootstrap(panel, pipe, plan, B=0, seed=0, base=base)


def test_clic_b_order_invariant():
    base = types.SimpleNamespace(loglik=-100.0)
    lls = np.array([-101.3, -100.2, -105.7, -100.9])

    def run_with(order):
        return BootstrapRun(base=base, thetas=np.zeros((4, 1)),
                            values=np.zeros((4, 1)),
                            logliks_original=lls[order], seed=0,
                            B_requested=4, n_dropped=0)

    v1, b1 = clic_b(run_with([0, 1, 2, 3]))
    v2, b2 = clic_b(run_with([2, 0, 3, 1]))
    assert abs(v1 - v2) < 1e-10
    assert abs(b1 - b2) < 1e-10
    empty = BootstrapRun(base=base, thetas=np.zeros((0, 1)),
                         values=np.zeros((0, 1)),
                         logliks_original=np.array([]), seed=0,
                         B_requested=0, n_dropped=0)
    with pytest.raises(ValueError, match="empty"):
        clic_b(empty)


def test_pipeline_margins_validation(small_fit):
    panel, pipe, _ = small_fit
    with pytest.raises(ValueError, match="margins"):
        TwoStepPipeline(pipe.model, margins="nope")
    with pytest.raises(ValueError, match="raw-data"):
        TwoStepPipeline(pipe.model, margins="two_step").fit(panel)
    raw = GridPanel(site_ids=panel.site_ids, lon=panel.lon, lat=panel.lat,
                    t=panel.t, year=panel.year, month=panel.month,
                    enso=panel.enso, values=panel.values, scale="data")
    with pytest.raises(ValueError, match="Frechet"):
        TwoStepPipeline(pipe.model, margins="known").fit(raw)


def test_clic_and_clic_b_rank_models_alike():
    # the two penalties estimate the same quantity, so across repeated
    # panels they should almost always order a nested model pair the same
    ids, lon, lat = make_grid(3, 3)
    coords = np.column_stack([lon, lat])
    cfg = DependenceConfig(alpha=1.0, range_model=ConstantRange(rho=1.4),
                           aniso=Anisotropy(ratio=1.0, angle=0.0))
    simple = DependenceModel(cfg, free=("rho",))
    rich = DependenceModel(cfg, free=("rho", "alpha"))
    agree = 0
    for trial in range(12):
        vals = simulate_br_panel(cfg, coords, None, None, T=200,
                                 seed=100 + trial)
        panel = _frechet_panel(vals, lon, lat)
        plan = BlockPlan.iid(panel.n_times)
        verdicts = {}
        for name, model in (("simple", simple), ("rich", rich)):
            pipe = TwoStepPipeline(model, margins="known", restarts=1)
            fit = pipe.fit(panel)
            run = block_bootstrap(panel, pipe, plan, B=60, seed=trial,
                                  base=fit)
            verdicts[name] = (clic(fit), clic_b(run)[0])
        agree += ((verdicts["simple"][0] < verdicts["rich"][0])
                  == (verdicts["simple"][1] < verdicts["rich"][1]))
    assert agree >= 9


# ---------------------------------------------------------------------------
# basic intervals


def test_basic_ci_five_value_toy():
    ci = basic_ci(3.0, np.array([1.0, 2.0, 3.0, 4.0, 5.0]), param="rho",
                  level=0.5, min_replicates=5)
    assert ci.lo == 2.0
    assert ci.hi == 4.0
    assert ci.bias_corrected == 3.0
    assert ci.param == "rho" and ci.level == 0.5


def test_basic_ci_degenerate_replicates():
    vals = np.full(60, 1.7)
    ci = basic_ci(1.7, vals)
    assert ci.lo == 1.7 and ci.hi == 1.7 and ci.bias_corrected == 1.7
    ci_log = basic_ci(1.7, vals, transform="log")
    assert math.isclose(ci_log.lo, 1.7, rel_tol=1e-12)
    assert math.isclose(ci_log.hi, 1.7, rel_tol=1e-12)


def test_basic_ci_log_transform_matches_manual():
    rng = np.random.default_rng(11)
    vals = np.exp(rng.normal(0.3, 0.2, size=200))
    est = 1.4
    ci = basic_ci(est, vals, transform="log")
    manual = basic_ci(math.log(est), np.log(vals))
    assert math.isclose(ci.lo, math.exp(manual.lo), rel_tol=1e-12)
    assert math.isclose(ci.hi, math.exp(manual.hi), rel_tol=1e-12)
    assert ci.lo < est < ci.hi


def test_basic_ci_theta_logit_stays_in_range():
    rng = np.random.default_rng(4)
    vals = 1.0 + np.clip(rng.normal(0.5, 0.08, size=150), 0.15, 0.85)
    ci = basic_ci(1.5, vals, transform="theta-logit")
    assert 1.0 < ci.lo < ci.hi < 2.0


def test_basic_ci_validation():
    vals = np.linspace(1.1, 1.9, 80)
    with pytest.raises(ValueError, match="at least 50"):
        basic_ci(1.5, vals[:30])
    nans = np.concatenate([vals[:45], np.full(10, np.nan)])
    with pytest.raises(ValueError, match="at least 50"):
        basic_ci(1.5, nans)
    with pytest.raises(ValueError, match="unknown transform"):
        basic_ci(1.5, vals, transform="probit")
    with pytest.raises(ValueError, match="level"):
        basic_ci(1.5, vals, level=1.0)
    with pytest.raises(ValueError, match="undefined"):
        basic_ci(2.5, vals, transform="theta-logit")
    with pytest.raises(ValueError, match="undefined"):
        basic_ci(1.5, np.concatenate([vals, [-1.0]]), transform="log")


def test_selection_and_ci_csv_round_trip(tmp_path):
    rows = [{"model_id": "simple", "loglik": -12.5, "clic": 30.0,
             "clic_b": 31.25, "boot_bias": 0.5, "B_effective": 60}]
    sel_path = tmp_path / "sel.csv"
    selection_to_csv(rows, str(sel_path))
    with open(sel_path) as fh:
        got = list(csv.reader(fh))
    assert got[0] == SELECTION_HEADER
    assert got[1][0] == "simple"
    assert float(got[1][3]) == 31.25

    ci = basic_ci(3.0, np.arange(1.0, 6.0), param="rho", level=0.5,
                  min_replicates=5)
    ci_path = tmp_path / "ci.csv"
    cis_to_csv([ci], str(ci_path))
    with open(ci_path) as fh:
        rows2 = list(csv.DictReader(fh))
    assert list(rows2[0]) == CI_HEADER
    assert rows2[0]["param"] == "rho"
    assert float(rows2[0]["lo"]) == 2.0
    assert float(rows2[0]["hi"]) == 4.0
