"""Uncertainty and model selection for pairwise-likelihood fits.

A composite likelihood is misspecified as a likelihood, so the usual
observed-information variance is wrong. This module provides the two
corrections used throughout:

* the Godambe sandwich H^{-1} J H^{-1} (H the negative Hessian of the
  composite log-likelihood, J the outer-product sum of per-time scores),
  with the composite-likelihood information criterion
  CLIC = -2 log L + 2 tr(J H^{-1});

* a temporal block bootstrap that refits the model on resampled blocks of
  time points, giving basic confidence intervals on a transformed scale and
  the bootstrap variant of the criterion,
  CLIC^b = mean_b [ 2 log L(psi_hat) - 4 log L(psi_hat*_b) ],
  where each replicate estimate is re-scored on the original data. Since
  psi_hat maximizes the original composite log-likelihood, the implied
  penalty is nonnegative, and a degenerate plan whose only block is the
  whole series returns exactly -2 log L.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings

import numpy as np

from .margins import fit_margins, transform_panel
from .pairlik import DependenceModel, FitResult, PairIndex, fit_dependence
from .panel import GridPanel, _fmt
from .dependence import DependenceConfig
from .simulate import derived_rng

_COND_LIMIT = 1e12


@dataclasses.dataclass
class SandwichResult:
    """Godambe matrices and the implied covariance on the unconstrained scale."""

    H: np.ndarray
    J: np.ndarray
    cov: np.ndarray
    names: list
    used_pinv: bool

    def se(self) -> np.ndarray:
        d = np.diag(self.cov).copy()
        bad = d < 0
        if bad.any():
            warnings.warn("negative sandwich variance clipped to zero",
                          RuntimeWarning, stacklevel=2)
            d[bad] = 0.0
        return np.sqrt(d)


def sandwich(fit: FitResult, fd_step: float = 1e-4) -> SandwichResult:
    """Sandwich covariance of the unconstrained estimates.

    H is the negative Hessian of the composite log-likelihood at the
    optimum, by central second differences with per-coordinate steps
    fd_step * (1 + |theta_i|); J is the per-time score outer-product sum
    (annual maxima are treated as independent across time). Near-singular H
    falls back to a pseudo-inverse and flags the result.
    """
    obj = fit.objective
    theta = np.asarray(fit.theta, dtype=float)
    p = theta.size
    h = fd_step * (1.0 + np.abs(theta))

    f0 = obj.loglik(theta)
    H = np.empty((p, p))
    # diagonal terms
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (obj.loglik(theta + ei) - 2.0 * f0
                   + obj.loglik(theta - ei)) / h[i] ** 2
    for i in range(p):
        for j in range(i + 1, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (obj.loglik(theta + ei + ej) - obj.loglik(theta + ei - ej)
                   - obj.loglik(theta - ei + ej)
                   + obj.loglik(theta - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    H = -H
    if not np.isfinite(H).all():
        raise ValueError("non-finite Hessian at the fitted point")

    S = fit.scores if fit.scores is not None and fit.scores.size \
        else obj.scores(theta)
    J = S.T @ S

    used_pinv = np.linalg.cond(H) > _COND_LIMIT
    if used_pinv:
        warnings.warn("near-singular Hessian: sandwich uses a pseudo-inverse",
                      RuntimeWarning, stacklevel=2)
        Hinv = np.linalg.pinv(H)
    else:
        Hinv = np.linalg.inv(H)
    cov = Hinv @ J @ Hinv
    return SandwichResult(H=H, J=J, cov=cov, names=list(fit.names),
                          used_pinv=used_pinv)


def clic(fit: FitResult, sand: SandwichResult | None = None,
         fd_step: float = 1e-4) -> float:
    """Composite-likelihood information criterion -2 log L + 2 tr(J H^{-1})."""
    if sand is None:
        sand = sandwich(fit, fd_step=fd_step)
    Hinv = np.linalg.pinv(sand.H) if sand.used_pinv else np.linalg.inv(sand.H)
    return -2.0 * fit.loglik + 2.0 * float(np.trace(sand.J @ Hinv))


# ---------------------------------------------------------------------------
# temporal block bootstrap


@dataclasses.dataclass
class BlockPlan:
    """Partition of the time axis into blocks resampled with replacement.

    blocks holds integer row indices into the panel's time axis. A resample
    draws blocks uniformly with replacement, concatenates them until at
    least T rows are collected, and truncates to exactly T.
    """

    blocks: list

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("a block plan needs at least one block")
        self.blocks = [np.asarray(b, dtype=int) for b in self.blocks]
        for b in self.blocks:
            if b.size == 0:
                raise ValueError("empty block in plan")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @classmethod
    def iid(cls, T: int) -> "BlockPlan":
        """One block per time point: the classical iid bootstrap."""
        return cls(blocks=[np.array([i]) for i in range(int(T))])

    @classmethod
    def whole_series(cls, T: int) -> "BlockPlan":
        """Single block holding everything: every resample is the identity."""
        return cls(blocks=[np.arange(int(T))])

    @classmethod
    def by_years(cls, years: np.ndarray, block_years: int = 2) -> "BlockPlan":
        """Consecutive runs of block_years calendar years, leftover kept short.

        Years must be sorted (the panel's natural time order). With 37 years
        and block_years=2 this gives 18 two-year blocks plus one final
        one-year block.
        """
        years = np.asarray(years, dtype=int)
        if (np.diff(years) < 0).any():
            raise ValueError("years must be nondecreasing")
        uniq = np.unique(years)
        blocks = []
        for k in range(0, uniq.size, block_years):
            chunk = uniq[k:k + block_years]
            rows = np.flatnonzero(np.isin(years, chunk))
            blocks.append(rows)
        return cls(blocks=blocks)

    def resample(self, rng: np.random.Generator, T: int) -> np.ndarray:
        parts = []
        total = 0
        nb = len(self.blocks)
        while total < T:
            b = self.blocks[rng.integers(nb)]
            parts.append(b)
            total += b.size
        idx = np.concatenate(parts)[:T]
        return idx


def _resample_panel(panel: GridPanel, idx: np.ndarray) -> GridPanel:
    """Panel with rows idx, relabeled t = 1..len(idx) (labels must be unique)."""
    return GridPanel(site_ids=panel.site_ids, lon=panel.lon, lat=panel.lat,
                     t=np.arange(1, idx.size + 1), year=panel.year[idx],
                     month=panel.month[idx], enso=panel.enso[idx],
                     values=panel.values[idx], scale=panel.scale)


@dataclasses.dataclass
class TwoStepPipeline:
    """Recipe to refit the model on a (resampled) panel.

    margins="known" expects a panel already on the Frechet scale and skips
    the marginal step; margins="two_step" expects raw data, fits a GEV at
    every site, transforms, then fits the dependence model. Replicate refits
    warm-start from a base fit with looser tolerances (restarts=1,
    xatol/fatol from replicate_tols) and skip the score computation.
    """

    model: DependenceModel
    c: float = 2.0
    margins: str = "two_step"
    min_len: int = 15
    restarts: int = 3
    xatol: float = 1e-4
    fatol: float = 1e-7
    replicate_tols: tuple = (3e-3, 1e-4)

    def __post_init__(self):
        if self.margins not in ("known", "two_step"):
            raise ValueError(f"margins must be 'known' or 'two_step', "
                             f"got {self.margins!r}")

    def _frechet(self, panel: GridPanel) -> GridPanel:
        if self.margins == "known":
            if panel.scale != "frechet":
                raise ValueError("margins='known' expects a Frechet panel, "
                                 f"got scale={panel.scale!r}")
            return panel
        if panel.scale != "data":
            raise ValueError("margins='two_step' expects a raw-data panel, "
                             f"got scale={panel.scale!r}")
        table = fit_margins(panel, min_len=self.min_len)
        return transform_panel(panel, table, "frechet")

    def fit(self, panel: GridPanel,
            pair_index: PairIndex | None = None) -> FitResult:
        fp = self._frechet(panel)
        return fit_dependence(fp, self.model, c=self.c, restarts=self.restarts,
                              xatol=self.xatol, fatol=self.fatol,
                              pair_index=pair_index)

    def fit_replicate(self, panel: GridPanel, init: DependenceConfig,
                      pair_index: PairIndex | None = None) -> FitResult:
        fp = self._frechet(panel)
        xatol, fatol = self.replicate_tols
        return fit_dependence(fp, self.model, c=self.c, init=init,
                              restarts=1, xatol=xatol, fatol=fatol,
                              pair_index=pair_index, compute_scores=False)


@dataclasses.dataclass
class BootstrapRun:
    """Replicate estimates plus their composite log-likelihoods on the
    original data (theta rows are unconstrained, values rows natural)."""

    base: FitResult
    thetas: np.ndarray
    values: np.ndarray
    logliks_original: np.ndarray
    seed: int
    B_requested: int
    n_dropped: int

    @property
    def B_effective(self) -> int:
        return self.thetas.shape[0]


def block_bootstrap(panel: GridPanel, pipeline: TwoStepPipeline,
                    plan: BlockPlan, B: int = 200, seed: int = 0,
                    base: FitResult | None = None,
                    max_drop_frac: float = 0.1) -> BootstrapRun:
    """Refit the pipeline on B block-resampled panels.

    Each replicate b uses the derived stream (seed, b), draws a resample
    from the plan, refits (margins included when the pipeline is two-step),
    and is re-scored on the original data through the base fit's objective.
    Replicates that error out or return non-finite estimates are dropped;
    more than max_drop_frac of B dropped is a run failure.
    """
    if B < 1:
        raise ValueError(f"need at least one replicate, got B={B}")
    if base is None:
        base = pipeline.fit(panel)
    T = panel.n_times
    thetas, values, lls = [], [], []
    n_dropped = 0
    identity = np.arange(T)
    for b in range(B):
        rng = derived_rng(seed, b)
        idx = plan.resample(rng, T)
        if np.array_equal(idx, identity):
            # identity resample: the replicate procedure sees the original
            # data unchanged, so its estimate is the base estimate; skipping
            # the refit keeps the degenerate bootstrap exact instead of
            # optimizer-noise close
            thetas.append(base.theta)
            values.append(base.constrained_values())
            lls.append(base.loglik)
            continue
        try:
            rep_panel = _resample_panel(panel, idx)
            rep = pipeline.fit_replicate(rep_panel, init=base.config)
            ll = base.objective.loglik(rep.theta)
            if not (np.isfinite(rep.theta).all() and math.isfinite(ll)):
                raise ValueError("non-finite replicate estimate")
        except (ValueError, RuntimeError, FloatingPointError):
            n_dropped += 1
            continue
        thetas.append(rep.theta)
        values.append(rep.constrained_values())
        lls.append(ll)
    if n_dropped > max_drop_frac * B:
        raise RuntimeError(
            f"bootstrap failed: {n_dropped} of {B} replicates dropped "
            f"(limit {max_drop_frac:.0%})")
    return BootstrapRun(base=base, thetas=np.array(thetas),
                        values=np.array(values),
                        logliks_original=np.array(lls), seed=seed,
                        B_requested=B, n_dropped=n_dropped)


def clic_b(run: BootstrapRun, base: FitResult | None = None):
    """Bootstrap information criterion and the bias term it is built from.

    Returns (clic_b, boot_bias) with
    clic_b = mean_b [2 L_hat - 4 L*_b] and boot_bias = mean_b [2 (L*_b -
    L_hat)], L*_b the replicate estimate's composite log-likelihood on the
    original data. A plan whose resamples are all the identity gives
    (-2 L_hat, 0) exactly.
    """
    if base is None:
        base = run.base
    lhat = base.loglik
    lstar = run.logliks_original
    if lstar.size == 0:
        raise ValueError("empty bootstrap run")
    val = float(np.mean(2.0 * lhat - 4.0 * lstar))
    bias = float(np.mean(2.0 * (lstar - lhat)))
    return val, bias


# ---------------------------------------------------------------------------
# basic bootstrap confidence intervals

_TRANSFORMS = {
    "identity": (lambda x: x, lambda y: y),
    "log": (np.log, np.exp),
    # bijection (1, 2) -> R for pairwise extremal coefficients
    "theta-logit": (lambda x: np.log((x - 1.0) / (2.0 - x)),
                    lambda y: (1.0 + 2.0 * np.exp(y)) / (1.0 + np.exp(y))),
}


@dataclasses.dataclass
class CiResult:
    param: str
    estimate: float
    bias_corrected: float
    lo: float
    hi: float
    transform: str
    level: float


def basic_ci(estimate: float, boot_values: np.ndarray, param: str = "",
             level: float = 0.95, transform: str = "identity",
             min_replicates: int = 50) -> CiResult:
    """Basic (reflection) bootstrap interval on a transformed scale.

    With h the transform, h_(k) the order statistics of the replicate
    values, and k chosen as round((B + 1) p) clipped to [1, B], the interval
    is [h^{-1}(2 h(est) - h_(k_hi)), h^{-1}(2 h(est) - h_(k_lo))]; the
    bias-corrected point estimate is h^{-1}(2 h(est) - mean h).
    """
    if transform not in _TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}; choose from "
                         f"{sorted(_TRANSFORMS)}")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    boot_values = np.asarray(boot_values, dtype=float)
    boot_values = boot_values[np.isfinite(boot_values)]
    B = boot_values.size
    if B < min_replicates:
        raise ValueError(f"need at least {min_replicates} finite replicates, "
                         f"got {B}")
    h, hinv = _TRANSFORMS[transform]
    with np.errstate(all="raise"):
        try:
            hb = np.sort(h(boot_values))
            he = float(h(estimate))
        except FloatingPointError:
            raise ValueError(
                f"transform {transform!r} undefined for these values") \
                from None
    alpha = 1.0 - level
    k_lo = int(np.clip(round((B + 1) * (alpha / 2.0)), 1, B))
    k_hi = int(np.clip(round((B + 1) * (1.0 - alpha / 2.0)), 1, B))
    lo = float(hinv(2.0 * he - hb[k_hi - 1]))
    hi = float(hinv(2.0 * he - hb[k_lo - 1]))
    bc = float(hinv(2.0 * he - hb.mean()))
    return CiResult(param=param, estimate=float(estimate), bias_corrected=bc,
                    lo=lo, hi=hi, transform=transform, level=level)


# ---------------------------------------------------------------------------
# CSV writers

SELECTION_HEADER = ["model_id", "loglik", "clic", "clic_b", "boot_bias",
                    "B_effective"]


def selection_to_csv(rows, path: str) -> None:
    """rows: iterables/dicts with the SELECTION_HEADER fields in order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SELECTION_HEADER)
        for r in rows:
            if isinstance(r, dict):
                r = [r[k] for k in SELECTION_HEADER]
            out = []
            for v in r:
                out.append(_fmt(v) if isinstance(v, float) else v)
            w.writerow(out)


CI_HEADER = ["param", "estimate", "bias_corrected", "lo", "hi", "transform",
             "level"]


def cis_to_csv(cis, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CI_HEADER)
        for c in cis:
            w.writerow([c.param, _fmt(c.estimate), _fmt(c.bias_corrected),
                        _fmt(c.lo), _fmt(c.hi), c.transform, _fmt(c.level)])
