"""Rank-based extremal-coefficient estimates and their binned summaries."""

import numpy as np
import pytest
from scipy.special import ndtr

from stmaxstab import (Anisotropy, ConstantRange, DependenceConfig,
                       GridPanel, binned_pairs, derived_rng,
                       fmadogram_theta, make_grid, simulate_br_panel,
                       simulate_logistic)
from stmaxstab.empdep import DEFAULT_BIN_EDGES


def _panel(values, lon, lat, enso=None, month=None):
    values = np.asarray(values, dtype=float)
    T = values.shape[0]
    t = np.arange(1, T + 1)
    if month is None:
        month = np.where(t % 12 == 0, 12, t % 12)
    if enso is None:
        enso = np.zeros(T)
    return GridPanel(site_ids=np.arange(1, values.shape[1] + 1),
                     lon=lon, lat=lat, t=t, year=1 + (t - 1) // 12,
                     month=month, enso=enso, values=values, scale="frechet")


def test_comonotone_pair_gives_theta_one():
    x = derived_rng(31).standard_exponential(500)
    assert fmadogram_theta(x, x) == 1.0


def test_independent_pair_gives_theta_two():
    rng = derived_rng(32)
    x = 1.0 / rng.standard_exponential(100_000)
    y = 1.0 / rng.standard_exponential(100_000)
    assert abs(fmadogram_theta(x, y) - 2.0) < 0.02


def test_brown_resnick_pair_matches_closed_form():
    gamma = 4.0
    cfg = DependenceConfig(alpha=1.0, range_model=ConstantRange(1.0),
                           aniso=Anisotropy())
    z = simulate_br_panel(cfg, np.array([[0.0, 0.0], [gamma, 0.0]]),
                          T=20_000, seed=derived_rng(33))
    theta = fmadogram_theta(z[:, 0], z[:, 1])
    assert abs(theta - 2.0 * ndtr(1.0)) < 0.03


def test_rank_invariance_under_increasing_transforms():
    z = simulate_logistic(0.6, 2, size=2_000, seed=derived_rng(34))
    a = fmadogram_theta(z[:, 0], z[:, 1])
    b = fmadogram_theta(np.log(z[:, 0]), z[:, 1] ** 3)
    assert abs(a - b) < 1e-12


def test_fmadogram_symmetry_and_validation():
    z = simulate_logistic(0.6, 2, size=200, seed=derived_rng(35))
    assert abs(fmadogram_theta(z[:, 0], z[:, 1])
               - fmadogram_theta(z[:, 1], z[:, 0])) < 1e-12
    with pytest.raises(ValueError, match="complete cases"):
        fmadogram_theta(z[:10, 0], z[:10, 1])
    const = np.ones(100)
    with pytest.raises(ValueError, match="constant"):
        fmadogram_theta(const, z[:100, 1])
    with pytest.raises(ValueError, match="vectors"):
        fmadogram_theta(z, z)


def test_fmadogram_drops_missing_times():
    z = simulate_logistic(0.6, 2, size=500, seed=derived_rng(36))
    x, y = z[:, 0].copy(), z[:, 1].copy()
    full = fmadogram_theta(x[:400], y[:400])
    x[400:] = np.nan
    assert abs(fmadogram_theta(x, y) - full) < 1e-12


def test_binned_pairs_single_bin_median_matches_pair_estimates():
    cfg = DependenceConfig(alpha=1.0, range_model=ConstantRange(2.0),
                           aniso=Anisotropy())
    ids, lon, lat = make_grid(3, 3)
    vals = simulate_br_panel(cfg, np.column_stack([lon, lat]), T=120,
                             seed=derived_rng(37))
    panel = _panel(vals, lon, lat)
    rows, table = binned_pairs(panel, bin_edges=(0.9, 1.1))
    # the only pairs at distance in [0.9, 1.1) are the 12 unit-spaced ones
    assert len(rows) == 12
    assert len(table) == 1
    med = np.median([r.theta for r in rows])
    assert abs(table[0]["median"] - med) < 1e-12
    assert table[0]["n_pairs"] == 12


def test_binned_pairs_strata_detect_range_difference():
    # same geometry, two regimes: strong dependence in stratum "hi"
    # (large rho), weak in "lo"; the binned medians must order accordingly
    ids, lon, lat = make_grid(3, 3)
    coords = np.column_stack([lon, lat])
    T = 240
    hi_cfg = DependenceConfig(alpha=1.0, range_model=ConstantRange(6.0),
                              aniso=Anisotropy())
    lo_cfg = DependenceConfig(alpha=1.0, range_model=ConstantRange(0.5),
                              aniso=Anisotropy())
    z_hi = simulate_br_panel(hi_cfg, coords, T=T // 2, seed=derived_rng(38))
    z_lo = simulate_br_panel(lo_cfg, coords, T=T // 2, seed=derived_rng(39))
    vals = np.vstack([z_hi, z_lo])
    panel = _panel(vals, lon, lat)
    half = np.arange(T) < T // 2
    rows, table = binned_pairs(panel, strata=[("hi", half), ("lo", ~half)],
                               bin_edges=(0.5, 1.5))
    by = {row["stratum"]: row["median"] for row in table}
    assert by["hi"] < by["lo"]


def test_binned_pairs_anisotropy_changes_binning():
    # ratio far from 1 stretches one axis: vertical unit pairs leave the
    # first bin once their transformed distance exceeds the edge
    ids, lon, lat = make_grid(3, 3)
    vals = 1.0 / derived_rng(40).standard_exponential((60, 9))
    panel = _panel(vals, lon, lat)
    rows_iso, _ = binned_pairs(panel, bin_edges=(0.5, 1.5))
    rows_an, _ = binned_pairs(panel, aniso=Anisotropy(ratio=3.0, angle=0.0),
                              bin_edges=(0.5, 1.5))
    assert len(rows_iso) == 20   # 12 unit pairs + 8 diagonals at sqrt(2)
    assert len(rows_an) == 6     # only horizontal unit pairs survive


def test_binned_pairs_skips_thin_cells_with_warning():
    ids, lon, lat = make_grid(2, 2)
    vals = 1.0 / derived_rng(41).standard_exponential((30, 4))
    vals[:20, 0] = np.nan   # site 1 has only 10 complete cases
    panel = _panel(vals, lon, lat)
    with pytest.warns(UserWarning, match="skipped"):
        rows, _ = binned_pairs(panel, bin_edges=(0.5, 1.5), min_count=15)
    assert all(r.site_a != 1 for r in rows)


def test_binned_pairs_validation():
    ids, lon, lat = make_grid(2, 2)
    vals = 1.0 / derived_rng(42).standard_exponential((40, 4))
    panel = _panel(vals, lon, lat)
    with pytest.raises(ValueError, match="increasing"):
        binned_pairs(panel, bin_edges=(2.0, 1.0))
    with pytest.raises(ValueError, match="length T"):
        binned_pairs(panel, strata=[("bad", np.ones(3, dtype=bool))])


def test_default_bin_edges_frozen():
    assert DEFAULT_BIN_EDGES == (0.5, 1.5, 2.5, 3.5, 4.5)
