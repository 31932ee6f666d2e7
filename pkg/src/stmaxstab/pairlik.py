"""Truncated pairwise likelihood for Brown-Resnick dependence.

For one site pair at variogram value gamma the bivariate exponent measure on
standard Frechet margins is

    V(z1, z2) = Phi(w1)/z1 + Phi(w2)/z2,
    w1 = sqrt(gamma)/2 + log(z2/z1)/sqrt(gamma),  w2 = sqrt(gamma) - w1,

whose partial derivatives collapse to dV/dz1 = -Phi(w1)/z1^2,
dV/dz2 = -Phi(w2)/z2^2 and d2V/dz1dz2 = -phi(w1)/(sqrt(gamma) z1^2 z2)
(using phi(w2) z1 = phi(w1) z2). The pair log density is then

    log f = -V + log(Phi(w1) Phi(w2)/(z1 z2)^2 + phi(w1)/(sqrt(gamma) z1^2 z2)),

and the objective sums log f over all site pairs within taper distance
sqrt(2 c^2) (inclusive, plain Euclidean distance) and all time points,
skipping pairs where either value is missing. Summation order is fixed:
pairs are sorted lexicographically by site index, times sum before pairs,
so totals are reproducible bit for bit.

Free parameters are optimized on unconstrained coordinates: log rho (or the
range coefficients beta as-is), the logit of alpha/2, log r, tan kappa.
"""

from __future__ import annotations

import dataclasses
import csv
import math

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .dependence import (Anisotropy, ConstantRange, DependenceConfig,
                         SplineRange, basis_matrix, lag_distance)
from .panel import GridPanel, _fmt

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_FD_SCORE_STEP = 1e-5


def exponent_v(z1, z2, gamma):
    """Bivariate exponent measure V(z1, z2) at variogram value gamma.

    gamma = 0 degenerates to the comonotone exponent max(1/z1, 1/z2);
    homogeneous of order -1 in (z1, z2); V(1, 1) is the extremal coefficient.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(z1 <= 0) or np.any(z2 <= 0):
        raise ValueError("exponent_v requires positive z1, z2")
    if np.any(gamma < 0):
        raise ValueError("exponent_v requires nonnegative gamma")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.sqrt(gamma)
        lr = np.log(z2) - np.log(z1)
        w1 = 0.5 * a + lr / a
        w2 = a - w1
        out = np.where(gamma > 0,
                       ndtr(w1) / z1 + ndtr(w2) / z2,
                       np.maximum(1.0 / z1, 1.0 / z2))
    return out if out.ndim else float(out)


def exponent_v_partials(z1, z2, gamma):
    """(dV/dz1, dV/dz2, d2V/dz1 dz2), analytic forms; gamma must be > 0."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(z1 <= 0) or np.any(z2 <= 0):
        raise ValueError("partials require positive z1, z2")
    if np.any(gamma <= 0):
        raise ValueError("partials require gamma > 0")
    a = np.sqrt(gamma)
    lr = np.log(z2) - np.log(z1)
    w1 = 0.5 * a + lr / a
    w2 = a - w1
    phi1 = np.exp(-0.5 * w1 * w1) / _SQRT_2PI
    d1 = -ndtr(w1) / z1**2
    d2 = -ndtr(w2) / z2**2
    d12 = -phi1 / (a * z1**2 * z2)
    return d1, d2, d12


def pair_logdensity(z1, z2, gamma):
    """log density of the Brown-Resnick pair on standard Frechet margins."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(z1 <= 0) or np.any(z2 <= 0):
        raise ValueError("pair_logdensity requires positive z1, z2")
    if np.any(gamma <= 0):
        raise ValueError("pair_logdensity requires gamma > 0")
    a = np.sqrt(gamma)
    lr = np.log(z2) - np.log(z1)
    w1 = 0.5 * a + lr / a
    w2 = a - w1
    p1, p2 = ndtr(w1), ndtr(w2)
    phi1 = np.exp(-0.5 * w1 * w1) / _SQRT_2PI
    iz1, iz2 = 1.0 / z1, 1.0 / z2
    V = p1 * iz1 + p2 * iz2
    curv = p1 * p2 * (iz1 * iz2) ** 2 + phi1 * iz1 * iz1 * iz2 / a
    with np.errstate(divide="ignore"):
        out = -V + np.log(curv)
    return out if out.ndim else float(out)


@dataclasses.dataclass(frozen=True)
class PairIndex:
    """Tapered site pairs: indices i < j, lags and plain distances.

    Pairs are ordered lexicographically by (i, j); their position is the
    pair id used everywhere downstream.
    """

    i: np.ndarray
    j: np.ndarray
    lags: np.ndarray
    dist: np.ndarray
    c: float

    @property
    def n_pairs(self) -> int:
        return self.i.size


def build_pair_index(coords, c: float) -> PairIndex:
    """All site pairs within taper distance sqrt(2 c^2), inclusive."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must be (D, 2)")
    if not (np.isfinite(c) and c > 0):
        raise ValueError(f"taper constant c must be positive, got {c}")
    D = coords.shape[0]
    ii, jj = np.triu_indices(D, k=1)
    lags = coords[jj] - coords[ii]
    d2 = np.einsum("ij,ij->i", lags, lags)
    keep = d2 <= 2.0 * c * c * (1.0 + 1e-12)
    if not keep.any():
        raise ValueError(f"taper c={c} leaves no site pairs")
    return PairIndex(i=ii[keep], j=jj[keep], lags=lags[keep],
                     dist=np.sqrt(d2[keep]), c=float(c))


_FREE_ORDER = ("rho", "beta", "alpha", "ratio", "angle")


class DependenceModel:
    """Which dependence parameters are free, plus fixed values for the rest.

    `template` supplies the fixed values and the starting point for the free
    ones. Free names: "rho" (constant range), "beta" (all spline
    coefficients), "alpha", "ratio", "angle". Unconstrained coordinates:
    log rho / beta as-is / logit(alpha/2) / log r / tan kappa.
    """

    def __init__(self, template: DependenceConfig, free=("rho",)):
        free = tuple(free)
        if len(set(free)) != len(free):
            raise ValueError("duplicate free parameter names")
        for name in free:
            if name not in _FREE_ORDER:
                raise ValueError(f"unknown free parameter {name!r}")
        constant = isinstance(template.range_model, ConstantRange)
        if "rho" in free and not constant:
            raise ValueError("free 'rho' needs a constant range template")
        if "beta" in free and constant:
            raise ValueError("free 'beta' needs a spline range template")
        self.template = template
        self.free = tuple(n for n in _FREE_ORDER if n in free)
        names = []
        for n in self.free:
            if n == "beta":
                K = template.range_model.basis.n_columns
                names.extend(f"beta_{k}" for k in range(K))
            else:
                names.append({"rho": "rho", "alpha": "alpha",
                              "ratio": "r", "angle": "kappa"}[n])
        self.names = names
        self.n_params = len(names)

    def pack(self, cfg: DependenceConfig) -> np.ndarray:
        """Unconstrained coordinates of cfg's free parameters."""
        out = []
        for n in self.free:
            if n == "rho":
                out.append(math.log(cfg.range_model.rho))
            elif n == "beta":
                out.extend(cfg.range_model.coef)
            elif n == "alpha":
                a = min(max(cfg.alpha, 1e-6), 2.0 - 1e-9)
                out.append(math.log(a / (2.0 - a)))
            elif n == "ratio":
                out.append(math.log(cfg.aniso.ratio))
            else:
                out.append(math.tan(cfg.aniso.angle))
        return np.array(out)

    def unpack(self, theta: np.ndarray) -> DependenceConfig:
        """DependenceConfig at unconstrained coordinates theta."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"theta must have length {self.n_params}")
        t = self.template
        alpha, ratio, angle = t.alpha, t.aniso.ratio, t.aniso.angle
        range_model = t.range_model
        k = 0
        for n in self.free:
            if n == "rho":
                range_model = ConstantRange(math.exp(theta[k]))
                k += 1
            elif n == "beta":
                K = t.range_model.basis.n_columns
                range_model = SplineRange(t.range_model.basis,
                                          tuple(theta[k:k + K]))
                k += K
            elif n == "alpha":
                alpha = 2.0 / (1.0 + math.exp(-theta[k]))
                k += 1
            elif n == "ratio":
                ratio = math.exp(theta[k])
                k += 1
            else:
                angle = math.atan(theta[k])
                k += 1
        return DependenceConfig(alpha=alpha, range_model=range_model,
                                aniso=Anisotropy(ratio=ratio, angle=angle))


class PairwiseObjective:
    """Caches everything data-dependent so one likelihood call is pure numpy.

    Exposes per_time(theta) -> (T,) pairwise log-likelihood contributions
    and loglik(theta) = per_time(theta).sum(); +/-inf propagates out of
    infeasible parameter values rather than raising mid-optimization.
    """

    def __init__(self, panel: GridPanel, model: DependenceModel,
                 c: float = 2.0, pair_index: PairIndex | None = None):
        if panel.scale != "frechet":
            raise ValueError(
                f"pairwise likelihood needs a Frechet-scale panel, "
                f"got scale {panel.scale!r}")
        self.model = model
        if pair_index is None:
            pair_index = build_pair_index(panel.coords, c)
        self.pairs = pair_index
        self.c = pair_index.c
        vals = panel.values
        bad = np.isfinite(vals) & (vals <= 0)
        if bad.any():
            ti, sj = np.argwhere(bad)[0]
            raise ValueError(
                f"non-positive Frechet value {vals[ti, sj]} at site "
                f"{int(panel.site_ids[sj])}, t={int(panel.t[ti])}")
        z1 = vals[:, self.pairs.i]
        z2 = vals[:, self.pairs.j]
        self.mask = np.isfinite(z1) & np.isfinite(z2)
        z1 = np.where(self.mask, z1, 1.0)
        z2 = np.where(self.mask, z2, 1.0)
        self._iz1 = 1.0 / z1
        self._iz2 = 1.0 / z2
        self._lr = np.log(z2) - np.log(z1)
        self._i1i1i2 = self._iz1 * self._iz1 * self._iz2
        self._i1i2sq = (self._iz1 * self._iz2) ** 2
        self.T = vals.shape[0]
        self.enso = panel.enso
        self.month = panel.month
        free = set(model.free)
        self._aniso_free = bool(free & {"ratio", "angle"})
        if not self._aniso_free:
            self._logdist = np.log(
                lag_distance(model.template.aniso, self.pairs.lags))
        self._spline = isinstance(model.template.range_model, SplineRange)
        if self._spline:
            self._B = basis_matrix(model.template.range_model.basis,
                                   self.enso, np.asarray(self.month, float))

    @property
    def n_pairs(self) -> int:
        return self.pairs.n_pairs

    def _gamma(self, cfg: DependenceConfig) -> np.ndarray:
        """(T, P) or (1, P) variogram values at the pair lags."""
        if self._aniso_free:
            logdist = np.log(lag_distance(cfg.aniso, self.pairs.lags))
        else:
            logdist = self._logdist
        if self._spline:
            logrho = self._B @ np.array(cfg.range_model.coef)
            return np.exp(cfg.alpha * (logdist[None, :] - logrho[:, None]))
        logrho = math.log(cfg.range_model.rho)
        return np.exp(cfg.alpha * (logdist - logrho))[None, :]

    def per_time(self, theta: np.ndarray) -> np.ndarray:
        """Per-time-point contributions l_t(theta); sums to the total."""
        try:
            cfg = self.model.unpack(theta)
        except (ValueError, OverflowError):
            return np.full(self.T, -np.inf)
        with np.errstate(all="ignore"):
            gamma = self._gamma(cfg)
            if not np.isfinite(gamma).all():
                return np.full(self.T, -np.inf)
            # in-place where possible: this runs tens of thousands of times
            # per fit and the (T, P) temporaries dominate the cost
            a = np.sqrt(gamma)
            w1 = self._lr / a
            w1 += 0.5 * a
            p2 = ndtr(a - w1)
            phi1 = np.multiply(w1, w1)
            phi1 *= -0.5
            np.exp(phi1, out=phi1)
            phi1 *= self._i1i1i2 / (_SQRT_2PI * a)
            p1 = ndtr(w1)
            inner = np.multiply(p1, p2, out=w1)
            inner *= self._i1i2sq
            inner += phi1
            np.log(inner, out=inner)
            p1 *= self._iz1
            p2 *= self._iz2
            inner -= p1
            inner -= p2
            term = inner
        return np.where(self.mask, term, 0.0).sum(axis=1)

    def loglik(self, theta: np.ndarray) -> float:
        return float(self.per_time(theta).sum())

    def scores(self, theta: np.ndarray,
               step: float = _FD_SCORE_STEP) -> np.ndarray:
        """(T, p) central-difference gradients of the per-time contributions."""
        p = self.model.n_params
        out = np.empty((self.T, p))
        for k in range(p):
            e = np.zeros(p)
            e[k] = step
            out[:, k] = (self.per_time(theta + e)
                         - self.per_time(theta - e)) / (2.0 * step)
        return out


def pairwise_loglik(panel: GridPanel, cfg: DependenceConfig, c: float = 2.0,
                    per_time: bool = False):
    """Truncated pairwise log-likelihood of a Frechet-scale panel at cfg."""
    free = ("beta",) if isinstance(cfg.range_model, SplineRange) else ("rho",)
    model = DependenceModel(cfg, free=free)
    obj = PairwiseObjective(panel, model, c=c)
    theta = model.pack(cfg)
    return obj.per_time(theta) if per_time else obj.loglik(theta)


@dataclasses.dataclass
class FitResult:
    """Pairwise-likelihood fit: estimates on both scales plus diagnostics.

    theta holds the unconstrained coordinates (the optimizer's space, also
    the scale on which sandwich variances and scores live); config is the
    same point as a validated DependenceConfig.
    """

    model: DependenceModel
    config: DependenceConfig
    theta: np.ndarray
    loglik: float
    n_evals: int
    converged: bool
    scores: np.ndarray
    objective: PairwiseObjective
    names: list

    def constrained_values(self) -> np.ndarray:
        """Estimates in natural units, aligned with self.names."""
        cfg = self.config
        out = []
        for n in self.model.free:
            if n == "rho":
                out.append(cfg.range_model.rho)
            elif n == "beta":
                out.extend(cfg.range_model.coef)
            elif n == "alpha":
                out.append(cfg.alpha)
            elif n == "ratio":
                out.append(cfg.aniso.ratio)
            else:
                out.append(cfg.aniso.angle)
        return np.array(out)

    def to_csv(self, path: str) -> None:
        vals = self.constrained_values()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "estimate", "unconstrained", "loglik",
                        "iterations", "converged"])
            for name, v, u in zip(self.names, vals, self.theta):
                w.writerow([name, _fmt(v), _fmt(u), _fmt(self.loglik),
                            self.n_evals,
                            "true" if self.converged else "false"])


def fit_dependence(panel: GridPanel, model: DependenceModel, c: float = 2.0,
                   init: DependenceConfig | None = None, restarts: int = 3,
                   xatol: float = 1e-4, fatol: float = 1e-7,
                   maxfev: int | None = None,
                   pair_index: PairIndex | None = None,
                   compute_scores: bool = True) -> FitResult:
    """Maximize the truncated pairwise log-likelihood over the free params.

    Derivative-free simplex search started at `init` (default: the model
    template); each restart reruns the search from the current best point
    with a fresh simplex, which unsticks collapsed simplexes cheaply. The
    returned log-likelihood never falls below the value at the start point.
    """
    obj = PairwiseObjective(panel, model, c=c, pair_index=pair_index)
    theta0 = model.pack(init if init is not None else model.template)
    p = model.n_params
    if maxfev is None:
        maxfev = 600 * p
    neg = lambda u: -obj.loglik(u)
    best_u, best_f = theta0, neg(theta0)
    n_evals, converged = 1, False
    for _ in range(max(restarts, 1)):
        # explicit simplex: the scipy default steps (5%, or 2.5e-4 at a
        # zero coordinate) start far too small for coefficients at 0 and
        # waste hundreds of evaluations growing back out
        simplex = np.tile(best_u, (p + 1, 1))
        simplex[1:] += np.diag(0.1 * (1.0 + np.abs(best_u)))
        res = minimize(neg, best_u, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": fatol,
                                "maxfev": maxfev, "adaptive": p >= 5,
                                "initial_simplex": simplex})
        n_evals += res.nfev
        if res.fun <= best_f:
            improved = best_f - res.fun
            best_u, best_f = res.x, res.fun
            converged = bool(res.success)
            if improved < max(fatol, 1e-10):
                break
        else:
            break
    scores = (obj.scores(best_u) if compute_scores
              else np.zeros((obj.T, p)))
    return FitResult(model=model, config=model.unpack(best_u),
                     theta=np.asarray(best_u, dtype=float),
                     loglik=-best_f, n_evals=n_evals, converged=converged,
                     scores=scores, objective=obj, names=list(model.names))
