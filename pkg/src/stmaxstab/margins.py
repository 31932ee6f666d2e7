"""Generalized extreme-value margins and marginal transforms.

Per-site GEV fits use probability-weighted-moment starting values followed by
a derivative-free simplex search on (location, log scale, shape), with the
shape constrained to (-0.5, 1.5). Fits for many sites run through one batched
simplex walk (see _optim) because bootstrap and test loops refit margins tens
of thousands of times.

Transforms to standard Frechet / Gumbel scale never clamp: a data value
outside the fitted GEV support raises with its location so upstream code can
report the offending cell.
"""

from __future__ import annotations

import dataclasses
import csv
import math

import numpy as np
from scipy.special import gamma as _gamma_fn
from scipy.special import logsumexp

from ._optim import nelder_mead_batch
from .panel import GridPanel, _fmt

_XI_NEAR_ZERO = 1e-8
_XI_LO, _XI_HI = -0.5, 1.5
_EULER = 0.5772156649015329


@dataclasses.dataclass(frozen=True)
class GevParams:
    """GEV(loc, scale, shape); shape 0 is Gumbel, CSV columns eta/tau/xi."""

    loc: float
    scale: float
    shape: float

    def __post_init__(self):
        if not np.isfinite([self.loc, self.scale, self.shape]).all():
            raise ValueError("GEV parameters must be finite")
        if self.scale <= 0:
            raise ValueError(f"GEV scale must be positive, got {self.scale}")


def gev_cdf(y, params: GevParams):
    """GEV distribution function; values off the support give exact 0 or 1."""
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        raise ValueError("gev_cdf requires finite input")
    ts = (y - params.loc) / params.scale
    if abs(params.shape) < _XI_NEAR_ZERO:
        out = np.exp(-np.exp(-ts))
    else:
        m = 1.0 + params.shape * ts
        with np.errstate(all="ignore"):
            out = np.where(m > 0, np.exp(-np.power(np.where(m > 0, m, 1.0),
                                                   -1.0 / params.shape)),
                           0.0 if params.shape > 0 else 1.0)
    return out if out.ndim else float(out)


def gev_quantile(u, params: GevParams):
    """Inverse of gev_cdf on (0, 1)."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("gev_quantile requires probabilities in (0, 1)")
    w = -np.log(u)
    if abs(params.shape) < _XI_NEAR_ZERO:
        out = params.loc - params.scale * np.log(w)
    else:
        out = params.loc + params.scale * (w**(-params.shape) - 1.0) / params.shape
    return out if out.ndim else float(out)


def gev_loglik(y, params: GevParams) -> float:
    """Log-likelihood of a sample (NaN entries are skipped)."""
    y = np.asarray(y, dtype=float)
    y = y[np.isfinite(y)]
    u = np.array([[params.loc, np.log(params.scale), params.shape]])
    nll = _make_batch_nll(y[None, :])(u, np.array([0]))[0]
    return -float(nll)


def _make_batch_nll(samples: np.ndarray):
    """Vectorized negative log-likelihood for a (B, n) batch of samples.

    Returns nll(u, which): u is (M, 3) rows of (loc, log scale, shape), which
    maps each row to its sample. NaN cells in `samples` are missing and
    contribute nothing. +inf flags off-support or out-of-box parameters.
    """
    samples = np.asarray(samples, dtype=float)
    finmask = np.isfinite(samples)
    nfin = finmask.sum(axis=1)
    med = np.ones(samples.shape[0])
    for b in range(samples.shape[0]):
        if nfin[b]:
            med[b] = np.median(samples[b, finmask[b]])
    yfill = np.where(finmask, samples, med[:, None])

    def nll(u, which):
        loc, logscale, xi = u[:, 0:1], u[:, 1:2], u[:, 2:3]
        yv = yfill[which]
        fm = finmask[which]
        nf = nfin[which]
        boxed = ((np.abs(logscale[:, 0]) < 50.0)
                 & (xi[:, 0] > _XI_LO) & (xi[:, 0] < _XI_HI))
        gum = np.abs(xi) < _XI_NEAR_ZERO
        xi_safe = np.where(gum, 1.0, xi)
        with np.errstate(all="ignore"):
            ts = (yv - loc) * np.exp(-logscale)
            m = 1.0 + xi_safe * ts
            bad = ((m <= 0) & fm).any(axis=1) & ~gum[:, 0]
            lm = np.log(np.where(m > 0, m, 1.0))
            term = np.where(gum, ts + np.exp(-ts),
                            (1.0 + 1.0 / xi_safe) * lm + np.exp(-lm / xi_safe))
            total = np.where(fm, term, 0.0).sum(axis=1) + nf * logscale[:, 0]
        return np.where(bad | ~boxed | ~np.isfinite(total), np.inf, total)

    return nll


def _pwm_start(y: np.ndarray) -> np.ndarray:
    """Hosking's PWM/L-moment starting point (loc, log scale, shape)."""
    x = np.sort(y)
    n = x.size
    i = np.arange(1, n + 1)
    b0 = x.mean()
    b1 = np.sum((i - 1) / (n - 1) * x) / n
    b2 = np.sum((i - 1) * (i - 2) / ((n - 1) * (n - 2)) * x) / n
    l1, l2, l3 = b0, 2 * b1 - b0, 6 * b2 - 6 * b1 + b0
    l2 = max(l2, 1e-10 * max(1.0, abs(l1)))
    t3 = np.clip(l3 / l2, -0.95, 0.95)
    c = 2.0 / (3.0 + t3) - np.log(2.0) / np.log(3.0)
    k = 7.8590 * c + 2.9554 * c * c
    if abs(k) < 1e-6:
        scale = l2 / np.log(2.0)
        loc = l1 - _EULER * scale
        shape = 0.0
    else:
        g = _gamma_fn(1.0 + k)
        scale = l2 * k / ((1.0 - 2.0**(-k)) * g)
        loc = l1 - scale * (1.0 - g) / k
        shape = -k
    scale = max(scale, 1e-8 * max(1.0, abs(l1)))
    shape = float(np.clip(shape, -0.45, 1.4))
    return np.array([loc, np.log(scale), shape])


def fit_gev_batch(samples: np.ndarray, min_len: int = 15,
                  xatol: float = 1e-5, fatol: float = 1e-9,
                  maxiter: int = 400):
    """Fit a GEV to every row of a (B, n) sample matrix (NaN = missing).

    Returns (loc, scale, shape, loglik, converged) arrays of length B.
    Raises if any row has fewer than ``min_len`` usable values or is
    degenerate (all values equal).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if np.isinf(samples).any():
        rows = sorted(set(np.nonzero(np.isinf(samples))[0].tolist()))
        raise ValueError(f"non-finite (infinite) sample values in rows {rows}")
    finmask = np.isfinite(samples)
    nfin = finmask.sum(axis=1)
    short = np.flatnonzero(nfin < min_len)
    if short.size:
        raise ValueError(
            f"rows {short.tolist()} have fewer than min_len={min_len} values")
    x0 = np.empty((samples.shape[0], 3))
    for b in range(samples.shape[0]):
        xb = samples[b, finmask[b]]
        if np.ptp(xb) == 0:
            raise ValueError(f"degenerate sample in row {b}: all values equal")
        x0[b] = _pwm_start(xb)
        # the PWM point can put a sample value outside the GEV support
        # (infinite objective everywhere near it, so the optimizer could
        # return an infeasible point); a Gumbel start is always feasible
        loc0, logs0, xi0 = x0[b]
        if abs(xi0) >= 1e-8:
            m_min = 1.0 + xi0 * (xb.min() - loc0) / math.exp(logs0)
            m_max = 1.0 + xi0 * (xb.max() - loc0) / math.exp(logs0)
            if min(m_min, m_max) <= 1e-6:
                x0[b, 2] = 0.0
    nll = _make_batch_nll(samples)
    u, f, conv, _ = nelder_mead_batch(nll, x0, xatol=xatol, fatol=fatol,
                                      maxiter=maxiter)
    return u[:, 0], np.exp(u[:, 1]), u[:, 2], -f, conv


@dataclasses.dataclass(frozen=True)
class GevFit:
    params: GevParams
    loglik: float
    converged: bool
    n_used: int


def fit_gev(sample, min_len: int = 15) -> GevFit:
    """Maximum-likelihood GEV fit of one sample (see fit_gev_batch)."""
    sample = np.asarray(sample, dtype=float).ravel()
    loc, scale, shape, ll, conv = fit_gev_batch(sample[None, :],
                                                min_len=min_len)
    n_used = int(np.isfinite(sample).sum())
    return GevFit(GevParams(float(loc[0]), float(scale[0]), float(shape[0])),
                  float(ll[0]), bool(conv[0]), n_used)


def _frechet_log(y: np.ndarray, loc, scale, shape):
    """log of the standard-Frechet transform; NaN passes through.

    Returns (logz, bad) where bad marks finite inputs off the GEV support.
    """
    with np.errstate(all="ignore"):
        ts = (y - loc) / scale
        if np.ndim(shape) == 0:
            near0 = abs(shape) < _XI_NEAR_ZERO
        else:
            near0 = np.abs(shape) < _XI_NEAR_ZERO
        shape_safe = np.where(near0, 1.0, shape)
        m = 1.0 + shape_safe * ts
        logz = np.where(near0, ts, np.log(np.where(m > 0, m, 1.0)) / shape_safe)
        bad = np.isfinite(y) & ~near0 & (m <= 0)
    logz = np.where(np.isnan(y), np.nan, logz)
    return logz, bad


def to_frechet(y, params: GevParams):
    """Map data to standard Frechet scale, z = -1/log GEV_cdf(y).

    NaN entries pass through; values outside the fitted support raise.
    """
    y = np.asarray(y, dtype=float)
    logz, bad = _frechet_log(y, params.loc, params.scale, params.shape)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise ValueError(
            f"value {y[tuple(idx)]} at index {tuple(idx)} is outside the "
            f"support of GEV{(params.loc, params.scale, params.shape)}")
    out = np.exp(logz)
    return out if out.ndim else float(out)


def to_gumbel(y, params: GevParams):
    """Map data to standard Gumbel scale (log of the Frechet transform)."""
    y = np.asarray(y, dtype=float)
    logz, bad = _frechet_log(y, params.loc, params.scale, params.shape)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise ValueError(
            f"value {y[tuple(idx)]} at index {tuple(idx)} is outside the "
            f"support of GEV{(params.loc, params.scale, params.shape)}")
    return logz if logz.ndim else float(logz)


def gumbel_location_mle(z) -> float:
    """Closed-form location MLE for unit-scale Gumbel data.

    With M observations the maximizer of the Gumbel(mu, 1) likelihood is
    mu = log M - log sum exp(-z_i), evaluated with log-sum-exp stabilization.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0 or not np.isfinite(z).all():
        raise ValueError("gumbel_location_mle requires finite, non-empty input")
    return float(np.log(z.size) - logsumexp(-z))


MARGIN_HEADER = ["site_id", "lon", "lat", "eta", "tau", "xi", "loglik",
                 "converged"]


@dataclasses.dataclass
class MarginTable:
    """Per-site GEV fits; the CSV names the parameters eta/tau/xi."""

    site_ids: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    shape: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray

    def __post_init__(self):
        self.site_ids = np.asarray(self.site_ids, dtype=int)
        if len(np.unique(self.site_ids)) != self.site_ids.size:
            raise ValueError("margin table site ids must be unique")
        for name in ("lon", "lat", "loc", "scale", "shape", "loglik"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != self.site_ids.shape:
                raise ValueError(f"{name} must match site_ids")
        self.converged = np.asarray(self.converged, dtype=bool)
        if (self.scale <= 0).any():
            raise ValueError("margin table scales must be positive")

    def params_for(self, site_id: int) -> GevParams:
        j = np.flatnonzero(self.site_ids == site_id)
        if j.size == 0:
            raise KeyError(f"no margin fit for site {site_id}")
        j = j[0]
        return GevParams(self.loc[j], self.scale[j], self.shape[j])

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MARGIN_HEADER)
            for j in range(self.site_ids.size):
                w.writerow([int(self.site_ids[j]), _fmt(self.lon[j]),
                            _fmt(self.lat[j]), _fmt(self.loc[j]),
                            _fmt(self.scale[j]), _fmt(self.shape[j]),
                            _fmt(self.loglik[j]),
                            "true" if self.converged[j] else "false"])

    @classmethod
    def from_csv(cls, path: str) -> "MarginTable":
        cols = {k: [] for k in MARGIN_HEADER}
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != MARGIN_HEADER:
                raise ValueError(f"unexpected margin header in {path}: {header}")
            for row in rd:
                if not row:
                    continue
                for k, v in zip(MARGIN_HEADER, row):
                    cols[k].append(v)
        return cls(site_ids=np.array(cols["site_id"], dtype=int),
                   lon=np.array(cols["lon"], dtype=float),
                   lat=np.array(cols["lat"], dtype=float),
                   loc=np.array(cols["eta"], dtype=float),
                   scale=np.array(cols["tau"], dtype=float),
                   shape=np.array(cols["xi"], dtype=float),
                   loglik=np.array(cols["loglik"], dtype=float),
                   converged=np.array([v == "true" for v in cols["converged"]]))


def fit_margins(panel: GridPanel, min_len: int = 15) -> MarginTable:
    """Independent GEV fit at every site of a data-scale panel."""
    try:
        loc, scale, shape, ll, conv = fit_gev_batch(panel.values.T,
                                                    min_len=min_len)
    except ValueError as e:
        raise ValueError(f"margin fitting failed: {e} "
                         f"(rows index panel.site_ids)") from e
    return MarginTable(site_ids=panel.site_ids.copy(), lon=panel.lon.copy(),
                       lat=panel.lat.copy(), loc=loc, scale=scale,
                       shape=shape, loglik=ll, converged=conv)


def transform_panel(panel: GridPanel, table: MarginTable,
                    target: str = "frechet") -> GridPanel:
    """Transform a data-scale panel to standard Frechet or Gumbel margins.

    A value outside its site's fitted GEV support aborts with the offending
    site and time label; nothing is clamped. Missing cells stay missing.
    """
    if target not in ("frechet", "gumbel"):
        raise ValueError("target must be 'frechet' or 'gumbel'")
    if panel.scale != "data":
        raise ValueError(f"panel is already on scale {panel.scale!r}")
    order = {s: j for j, s in enumerate(table.site_ids)}
    missing = [int(s) for s in panel.site_ids if int(s) not in order]
    if missing:
        raise ValueError(f"margin table lacks sites {missing}")
    cols = np.array([order[int(s)] for s in panel.site_ids])
    loc = table.loc[cols][None, :]
    scale = table.scale[cols][None, :]
    shape = table.shape[cols][None, :]
    logz, bad = _frechet_log(panel.values, loc, scale, shape)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(
            f"margin transform failed at site {int(panel.site_ids[j])}, "
            f"t={int(panel.t[i])}: value {panel.values[i, j]} lies outside "
            "the fitted GEV support")
    vals = logz if target == "gumbel" else np.exp(logz)
    return panel.with_values(vals, target)
