"""GEV distribution functions, per-site fitting, and margin transforms."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from stmaxstab import (GevParams, GridPanel, MarginTable, fit_gev,
                       fit_gev_batch, fit_margins, gev_cdf, gev_loglik,
                       gev_quantile, to_frechet, to_gumbel, transform_panel)
from stmaxstab.margins import gumbel_location_mle
from stmaxstab.panel import make_grid


def test_cdf_gumbel_at_location():
    assert gev_cdf(0.0, GevParams(0.0, 1.0, 0.0)) == pytest.approx(
        math.exp(-1.0), rel=1e-12)


def test_cdf_standard_frechet_at_one():
    assert gev_cdf(1.0, GevParams(1.0, 1.0, 1.0)) == pytest.approx(
        math.exp(-1.0), rel=1e-12)


def test_cdf_frozen_reference_value():
    # direct formula: exp(-(1 + 0.2*(1-0)/2)^(-5)) evaluated separately
    assert gev_cdf(1.0, GevParams(0.0, 2.0, 0.2)) == pytest.approx(
        0.5374490452230243, abs=1e-15)


def test_quantile_cdf_round_trip():
    params = GevParams(1.0, 2.0, 0.15)
    # interior of the support, stopping where the cdf still avoids
    # underflowing to exactly 0
    y = np.linspace(-4.5, 60.0, 200)
    u = gev_cdf(y, params)
    back = gev_quantile(u, params)
    assert np.allclose(back, y, rtol=1e-9)


def test_fit_gev_recovers_parameters():
    rng = np.random.default_rng(5)
    u = rng.uniform(size=10_000)
    y = gev_quantile(u, GevParams(0.0, 1.0, 0.2))
    fit = fit_gev(y)
    assert abs(fit.params.loc - 0.0) < 0.05
    assert abs(fit.params.scale - 1.0) < 0.05
    assert abs(fit.params.shape - 0.2) < 0.05


def test_fit_gev_gumbel_sample_shape_near_zero():
    rng = np.random.default_rng(6)
    y = -np.log(-np.log(rng.uniform(size=5_000)))
    fit = fit_gev(y)
    assert abs(fit.params.shape) < 0.05


def test_fit_gev_identical_values_error():
    with pytest.raises(ValueError):
        fit_gev(np.full(30, 3.0))


def test_fit_gev_short_sample_error():
    with pytest.raises(ValueError):
        fit_gev(np.arange(10.0))


def test_fit_gev_batch_matches_single():
    rng = np.random.default_rng(7)
    y = gev_quantile(rng.uniform(size=(3, 400)),
                     GevParams(1.0, 2.0, 0.1))
    loc, scale, shape, ll, conv = fit_gev_batch(y)
    for b in range(3):
        single = fit_gev(y[b])
        assert loc[b] == pytest.approx(single.params.loc, abs=1e-4)
        assert scale[b] == pytest.approx(single.params.scale, abs=1e-4)
        assert shape[b] == pytest.approx(single.params.shape, abs=1e-4)
        assert conv[b]


def test_to_frechet_gumbel_link():
    g = np.array([-1.0, 0.0, 0.7, 2.4])
    z = to_frechet(g, GevParams(0.0, 1.0, 0.0))
    assert np.allclose(z, np.exp(g), rtol=1e-12)


def test_to_frechet_at_location_unit_shape():
    assert to_frechet(1.0, GevParams(1.0, 1.0, 1.0)) == pytest.approx(1.0)


def test_to_frechet_round_trip_identity():
    params = GevParams(2.0, 3.0, 0.3)
    z = to_frechet(4.0, params)
    assert math.exp(-1.0 / z) == pytest.approx(gev_cdf(4.0, params),
                                               rel=1e-12)


def test_to_gumbel_is_log_of_frechet():
    params = GevParams(0.4, 1.7, -0.1)
    y = np.array([0.1, 0.5, 2.0, 5.0])
    assert np.allclose(to_gumbel(y, params),
                       np.log(to_frechet(y, params)), atol=1e-12)
    assert to_gumbel(0.4, GevParams(0.4, 1.0, 0.0)) == pytest.approx(0.0)


def test_gumbel_location_mle_closed_form():
    assert gumbel_location_mle(np.full(8, 2.3)) == pytest.approx(2.3)
    assert gumbel_location_mle(np.array([0.0, math.log(2.0)])) == \
        pytest.approx(math.log(4.0 / 3.0), abs=1e-12)


def test_gumbel_location_mle_consistency():
    rng = np.random.default_rng(8)
    z = 1.5 - np.log(-np.log(rng.uniform(size=10_000)))
    assert abs(gumbel_location_mle(z) - 1.5) < 0.05


def test_gumbel_location_mle_matches_numeric_optimum():
    rng = np.random.default_rng(9)
    z = 0.3 - np.log(-np.log(rng.uniform(size=200)))
    # numeric optimum = root of the likelihood score in mu
    score = lambda mu: z.size - np.sum(np.exp(-(z - mu)))
    root = brentq(score, -5.0, 5.0, xtol=1e-13)
    assert gumbel_location_mle(z) == pytest.approx(root, abs=1e-8)


def _data_panel(seed=0, D_side=3, T=60):
    rng = np.random.default_rng(seed)
    ids, lon, lat = make_grid(D_side, D_side)
    u = rng.uniform(size=(T, ids.size))
    y = gev_quantile(u, GevParams(8.0, 2.0, 0.1))
    return GridPanel(site_ids=ids, lon=lon, lat=lat,
                     t=np.arange(1, T + 1),
                     year=np.repeat(np.arange(T // 12 + 1) + 1, 12)[:T],
                     month=np.tile(np.arange(1, 13), T // 12 + 1)[:T],
                     enso=np.zeros(T), values=y, scale="data")


def test_transform_panel_frechet_margins():
    panel = _data_panel(seed=10, T=600)
    table = fit_margins(panel)
    out = transform_panel(panel, table, target="frechet")
    assert out.scale == "frechet"
    # transformed values should look standard Frechet: P(Z <= 1) = e^-1
    frac = (out.values <= 1.0).mean()
    assert abs(frac - math.exp(-1.0)) < 0.03


def test_transform_panel_keeps_missing():
    panel = _data_panel(seed=11, T=120)
    panel.values[3, 4] = np.nan
    table = fit_margins(panel)
    out = transform_panel(panel, table)
    assert np.isnan(out.values[3, 4])
    assert np.isfinite(out.values).sum() == panel.values.size - 1


def test_transform_panel_out_of_support_error():
    panel = _data_panel(seed=12, T=120)
    table = fit_margins(panel)
    j = 0
    # push one value below the lower endpoint of site j's fitted support
    lower = table.loc[j] - table.scale[j] / table.shape[j]
    assert table.shape[j] > 0
    panel.values[5, j] = lower - 1.0
    with pytest.raises(ValueError, match="support"):
        transform_panel(panel, table)


def test_margin_table_csv_round_trip(tmp_path):
    panel = _data_panel(seed=13, T=80)
    table = fit_margins(panel)
    path = str(tmp_path / "margins.csv")
    table.to_csv(path)
    back = MarginTable.from_csv(path)
    assert np.array_equal(back.site_ids, table.site_ids)
    for name in ("lon", "lat", "loc", "scale", "shape", "loglik"):
        assert np.array_equal(getattr(back, name), getattr(table, name))
    assert np.array_equal(back.converged, table.converged)


def test_gev_loglik_matches_density_sum():
    params = GevParams(1.0, 2.0, 0.2)
    y = np.array([0.5, 1.0, 3.0, 8.0])
    # independent evaluation: log density of GEV via cdf derivative form
    s = (y - params.loc) / params.scale
    m = 1.0 + params.shape * s
    expected = np.sum(-np.log(params.scale)
                      - (1.0 + 1.0 / params.shape) * np.log(m)
                      - m ** (-1.0 / params.shape))
    assert gev_loglik(y, params) == pytest.approx(expected, rel=1e-12)
