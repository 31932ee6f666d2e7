"""Monte Carlo test of multivariate max-stability for block maxima.

The statistic: fit a GEV at each site to the observed block maxima,
transform to standard Gumbel margins, take the rowwise maximum, fit its
Gumbel location by the closed-form MLE (unit scale), and measure departure
with the Anderson-Darling statistic. Under max-stability the rowwise max of
D standard Gumbel components is Gumbel again, so large A2 indicates a
non-max-stable dependence structure.

The null distribution: estimate a discrete spectral measure from
high-frequency data (empirical Frechet transform, L1 radial-angular
decomposition keeping the largest radii), tilt the retained atoms by
empirical likelihood so they satisfy the moment condition that makes the
spectral sampler's margins standard Frechet, simulate B replicate panels of
block maxima from that measure with the fitted GEV margins reimposed, and
recompute the whole statistic pipeline on each replicate, margin refits
included.
"""

from __future__ import annotations

import dataclasses
import csv
import math
import warnings

import numpy as np
from scipy.stats import rankdata

from .margins import fit_gev_batch, gumbel_location_mle
from .panel import GridPanel, _fmt
from .simulate import (derived_rng, frechet_margin_error,
                       simulate_empirical_spectral)

_F_LOG_FLOOR = math.log(1e-300)
_ONE_MINUS_F_FLOOR = 1e-16


def empirical_frechet(data: np.ndarray) -> np.ndarray:
    """Columnwise rank transform to standard Frechet: -1/log(rank/(n+1))."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be (n, D)")
    if not np.isfinite(data).all():
        raise ValueError("empirical Frechet transform requires complete data")
    n = data.shape[0]
    u = np.empty_like(data)
    for j in range(data.shape[1]):
        u[:, j] = rankdata(data[:, j]) / (n + 1.0)
    return -1.0 / np.log(u)


def radial_angular(z: np.ndarray, p: float = 0.9):
    """L1 radial-angular split keeping rows above the p-quantile radius.

    Returns (R, W, r0): radii R_i > r0 of the retained rows and their unit-
    L1 angular parts W_i (rows of the simplex). Needs more retained rows
    than dimensions (n0 >= D + 1).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("z must be (n, D)")
    if not (0 < p < 1):
        raise ValueError(f"p must be in (0, 1), got {p}")
    if np.any(z <= 0) or not np.isfinite(z).all():
        raise ValueError("radial_angular expects positive Frechet-scale data")
    R = z.sum(axis=1)
    r0 = float(np.quantile(R, p))
    keep = R > r0
    n0 = int(keep.sum())
    if n0 < z.shape[1] + 1:
        raise ValueError(
            f"only {n0} rows above the p={p} radius; need at least D+1 = "
            f"{z.shape[1] + 1} (lower p or provide more data)")
    Rk = R[keep]
    W = z[keep] / Rk[:, None]
    return Rk, W, r0


@dataclasses.dataclass
class TiltedMeasure:
    """Empirical-likelihood tilted spectral atoms.

    q are the tilted probabilities on the angular atoms W (radii R, cutoff
    r0); multiplier is the EL dual vector and residual the max constraint
    violation at the solution. constraint records which moment condition was
    enforced: "angular" (sum q_i W_i = 1/D, the condition under which the
    spectral sampler has standard Frechet margins) or "angular_over_radius"
    (sum q_i W_i / R_i = 1/D as written in the source recipe; infeasible
    once small-radius rows are discarded, kept for comparison).
    """

    q: np.ndarray
    W: np.ndarray
    R: np.ndarray
    r0: float
    multiplier: np.ndarray
    residual: float
    constraint: str

    @property
    def n_atoms(self) -> int:
        return self.q.size

    @property
    def margin_error(self) -> float:
        """Deviation from the sampler's standard-Frechet margin condition."""
        return frechet_margin_error(self.q, self.W)


def _owen_log(x: np.ndarray, eps: float):
    """Owen's modified log and its first two derivatives (quadratic below eps)."""
    below = x < eps
    xs = np.where(below, eps, x)
    f = np.where(below,
                 math.log(eps) - 1.5 + 2.0 * x / eps - x * x / (2 * eps * eps),
                 np.log(xs))
    d1 = np.where(below, 2.0 / eps - x / (eps * eps), 1.0 / xs)
    d2 = np.where(below, -1.0 / (eps * eps), -1.0 / (xs * xs))
    return f, d1, d2


def tilt_weights(W: np.ndarray, R: np.ndarray, constraint: str = "angular",
                 tol: float = 1e-8, max_newton: int = 200) -> TiltedMeasure:
    """Max-empirical-likelihood weights subject to the moment constraint.

    Maximizes sum_i log q_i over probability vectors q with
    sum_i q_i m_i = 1/D, where m_i = W_i ("angular", default) or W_i / R_i
    ("angular_over_radius"). Solved through the concave dual with damped
    Newton on Owen's modified log; for the angular constraint the D moment
    residuals sum to zero, so the last component is dropped as redundant.
    Raises if the converged residual exceeds tol (infeasible moment problem:
    lower the radial cutoff p or check the data).
    """
    W = np.asarray(W, dtype=float)
    R = np.asarray(R, dtype=float)
    if W.ndim != 2 or R.shape != (W.shape[0],):
        raise ValueError("W must be (n0, D) with matching radii R")
    n0, D = W.shape
    if n0 < D + 1:
        raise ValueError(f"need at least D+1 = {D + 1} atoms, got {n0}")
    if constraint == "angular":
        g = (W - 1.0 / D)[:, :-1]
    elif constraint == "angular_over_radius":
        g = W / R[:, None] - 1.0 / D
    else:
        raise ValueError(f"unknown constraint {constraint!r}")

    lam = np.zeros(g.shape[1])
    eps = 1.0 / n0
    for _ in range(max_newton):
        arg = 1.0 + g @ lam
        f, d1, d2 = _owen_log(arg, eps)
        grad = -g.T @ d1
        if np.max(np.abs(grad)) < 1e-11 * n0:
            break
        hess = -(g * d2[:, None]).T @ g
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        # backtrack on the dual objective -sum f
        cur = -f.sum()
        t = 1.0
        while t > 1e-12:
            trial = lam + t * step
            ft, _, _ = _owen_log(1.0 + g @ trial, eps)
            if -ft.sum() < cur:
                lam = trial
                break
            t *= 0.5
        else:
            break

    arg = 1.0 + g @ lam
    if np.any(arg <= 0):
        raise ValueError(
            "empirical-likelihood tilt failed: negative weights at the dual "
            "solution (infeasible moment constraint; lower p)")
    q = 1.0 / (n0 * arg)
    q = q / q.sum()
    target = 1.0 / D
    if constraint == "angular":
        residual = float(np.max(np.abs(q @ W - target)))
    else:
        residual = float(np.max(np.abs(q @ (W / R[:, None]) - target)))
    if residual > tol:
        hint = ("the constraint sum q_i W_i / R_i = 1/D is infeasible "
                "whenever all retained radii exceed D; "
                if constraint == "angular_over_radius" else "")
        raise ValueError(
            f"empirical-likelihood tilt did not satisfy the moment "
            f"constraint (residual {residual:.3g} > {tol:g}); {hint}"
            "lower the radial cutoff p or inspect the data")
    full = np.zeros(D) if constraint == "angular" else lam
    if constraint == "angular":
        full[:-1] = lam
    return TiltedMeasure(q=q, W=W, R=R, r0=float("nan"), multiplier=full,
                         residual=residual, constraint=constraint)


def ad_gumbel(x: np.ndarray, mu: float) -> float:
    """Anderson-Darling statistic against Gumbel(mu, 1).

    Uses exact log forms (log F = -exp(-(x - mu)), log(1 - F) via expm1) so
    no precision is lost in the tails; F is still clamped to
    [1e-300, 1 - 1e-16] with a warning if a sample point pins it to 0 or 1.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0 or not np.isfinite(x).all():
        raise ValueError("ad_gumbel requires finite, non-empty input")
    M = x.size
    xs = np.sort(x, kind="stable")
    with np.errstate(over="ignore"):
        w = np.exp(-(xs - mu))
    logF = -w
    clamped = False
    if (logF < _F_LOG_FLOOR).any():
        logF = np.maximum(logF, _F_LOG_FLOOR)
        clamped = True
    with np.errstate(divide="ignore"):
        one_minus = -np.expm1(-w)
        if (one_minus < _ONE_MINUS_F_FLOOR).any():
            one_minus = np.maximum(one_minus, _ONE_MINUS_F_FLOOR)
            clamped = True
        log1mF = np.log(one_minus)
    if clamped:
        warnings.warn("Gumbel CDF values clamped away from 0/1 in the "
                      "Anderson-Darling statistic", RuntimeWarning,
                      stacklevel=2)
    i = np.arange(1, M + 1)
    s = np.sum((2 * i - 1) * (logF + log1mF[::-1]))
    return float(-M - s / M)


@dataclasses.dataclass
class TestReport:
    """One max-stability test outcome (window/month label the data slice)."""

    window: str
    month: int
    M: int
    stat_obs: float
    p_value: float
    rejected: bool
    B_requested: int
    B_effective: int
    seed: int
    level: float
    null_stats: np.ndarray
    margin_error: float
    n_dropped: int
    notes: list


REPORT_HEADER = ["window", "month", "M", "stat_obs", "p_value", "rejected",
                 "B_effective", "seed"]


def reports_to_csv(reports, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow([r.window, r.month, r.M, _fmt(r.stat_obs),
                        _fmt(r.p_value), "true" if r.rejected else "false",
                        r.B_effective, r.seed])


def _gumbel_max_stat(maxima: np.ndarray, loc, scale, shape) -> float:
    """Transform block maxima to fitted-Gumbel margins, rowmax, AD statistic."""
    with np.errstate(all="ignore"):
        near0 = np.abs(shape) < 1e-8
        shape_safe = np.where(near0, 1.0, shape)
        m = 1.0 + shape_safe * (maxima - loc) / scale
        if np.any((m <= 0) & ~near0 & np.isfinite(maxima)):
            raise ValueError("fitted margins do not cover the maxima")
        z = np.where(near0, (maxima - loc) / scale,
                     np.log(np.where(m > 0, m, 1.0)) / shape_safe)
    z = np.where(np.isnan(maxima), -np.inf, z)
    rowmax = z.max(axis=1)
    if not np.isfinite(rowmax).all():
        raise ValueError("a block has no finite maxima across sites")
    mu = gumbel_location_mle(rowmax)
    return ad_gumbel(rowmax, mu)


def max_stability_test(maxima: np.ndarray, highfreq: np.ndarray,
                       B: int = 200, p: float = 0.9, seed: int = 0,
                       level: float = 0.05, constraint: str = "angular",
                       min_len: int = 15, window: str = "", month: int = 0,
                       max_regen: int = 3) -> TestReport:
    """Monte Carlo max-stability test of block maxima (see module docstring).

    maxima: (M, D) observed block maxima on the data scale (NaN allowed);
    highfreq: (n, D) complete high-frequency observations used to estimate
    the spectral measure. p is the radial cutoff quantile, B the number of
    null replicates; a replicate whose margin refit fails is regenerated up
    to max_regen times with fresh derived seeds, then dropped and logged.
    p-value: (1 + #{null >= observed}) / (B_effective + 1).
    """
    maxima = np.asarray(maxima, dtype=float)
    highfreq = np.asarray(highfreq, dtype=float)
    if maxima.ndim != 2 or highfreq.ndim != 2:
        raise ValueError("maxima and highfreq must be 2-d arrays")
    if maxima.shape[1] != highfreq.shape[1]:
        raise ValueError("maxima and highfreq must share the site dimension")
    if B < 1:
        raise ValueError(f"need at least one null replicate, got B={B}")
    M, D = maxima.shape
    notes: list = []

    loc, scale, shape, _, conv = fit_gev_batch(maxima.T, min_len=min_len)
    if not conv.all():
        notes.append(f"observed margin fit unconverged at "
                     f"{int((~conv).sum())} site(s)")
    stat_obs = _gumbel_max_stat(maxima, loc[None, :], scale[None, :],
                                shape[None, :])

    z = empirical_frechet(highfreq)
    R, W, r0 = radial_angular(z, p=p)
    atoms = tilt_weights(W, R, constraint=constraint)
    atoms.r0 = r0
    merr = atoms.margin_error
    if merr > 1e-6:
        notes.append(f"spectral margin condition violated by {merr:.3g}; "
                     "null replicates are biased")

    null_stats = []
    n_dropped = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for b in range(B):
            stat = None
            for attempt in range(max_regen):
                rng = derived_rng(seed, b, attempt)
                Z = simulate_empirical_spectral(atoms.q, atoms.W, size=M,
                                                seed=rng,
                                                check_margins=False)
                with np.errstate(all="ignore"):
                    near0 = np.abs(shape) < 1e-8
                    shape_safe = np.where(near0, 1.0, shape)
                    rep = np.where(near0[None, :],
                                   loc[None, :] + scale[None, :] * np.log(Z),
                                   loc[None, :] + scale[None, :]
                                   * (Z ** shape_safe[None, :] - 1.0)
                                   / shape_safe[None, :])
                try:
                    rl, rs, rsh, _, rconv = fit_gev_batch(rep.T,
                                                          min_len=min_len)
                    if not rconv.all():
                        raise ValueError("replicate margin refit unconverged")
                    stat = _gumbel_max_stat(rep, rl[None, :], rs[None, :],
                                            rsh[None, :])
                    break
                except (ValueError, FloatingPointError):
                    continue
            if stat is None:
                n_dropped += 1
            else:
                null_stats.append(stat)
    if n_dropped:
        notes.append(f"dropped {n_dropped} null replicates after "
                     f"{max_regen} attempts each")
    null_stats = np.array(null_stats)
    B_eff = null_stats.size
    if B_eff == 0:
        raise ValueError("all null replicates failed; test is undefined")
    p_value = (1.0 + float((null_stats >= stat_obs).sum())) / (B_eff + 1.0)
    return TestReport(window=window, month=month, M=M, stat_obs=stat_obs,
                      p_value=p_value, rejected=p_value <= level,
                      B_requested=B, B_effective=B_eff, seed=seed,
                      level=level, null_stats=null_stats, margin_error=merr,
                      n_dropped=n_dropped, notes=notes)


@dataclasses.dataclass
class ValidationSummary:
    reports: list
    failures: list
    n_cells: int
    n_rejections: int

    @property
    def rejection_fraction(self) -> float:
        done = len(self.reports)
        return self.n_rejections / done if done else float("nan")


def select_validation(panel: GridPanel, hf_values: np.ndarray,
                      hf_month: np.ndarray, windows, months=range(1, 13),
                      B: int = 200, p: float = 0.9, seed: int = 0,
                      level: float = 0.05, constraint: str = "angular",
                      min_len: int = 15) -> ValidationSummary:
    """Run the max-stability test on every (window, month) data slice.

    panel holds block maxima (data scale) with panel.month giving each
    row's calendar month; hf_values (n, D) are the underlying high-frequency
    observations, hf_month their calendar months. windows is a list of
    (label, site mask) pairs partitioning or subsetting the sites. Cells
    whose test errors out are recorded as failures, not raised.
    """
    hf_values = np.asarray(hf_values, dtype=float)
    hf_month = np.asarray(hf_month, dtype=int)
    if hf_values.shape[0] != hf_month.size:
        raise ValueError("hf_values and hf_month must align")
    if hf_values.shape[1] != panel.n_sites:
        raise ValueError("hf_values must cover the panel's sites")
    reports, failures = [], []
    cell = 0
    for label, smask in windows:
        smask = np.asarray(smask, dtype=bool)
        for m in months:
            cell += 1
            rows = panel.month == m
            maxima = panel.values[np.ix_(rows, smask)]
            hf = hf_values[np.ix_(hf_month == m, smask)]
            try:
                rep = max_stability_test(
                    maxima, hf, B=B, p=p, seed=seed + cell, level=level,
                    constraint=constraint, min_len=min_len, window=label,
                    month=int(m))
                reports.append(rep)
            except (ValueError, RuntimeError) as e:
                failures.append({"window": label, "month": int(m),
                                 "error": str(e)})
    n_rej = sum(r.rejected for r in reports)
    return ValidationSummary(reports=reports, failures=failures,
                             n_cells=cell, n_rejections=n_rej)
