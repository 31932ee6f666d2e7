"""Exact samplers for max-stable fields on standard Frechet margins.

The core sampler draws a Brown-Resnick field by the extremal-functions
sweep: sites are visited in order, and at site n a decreasing sequence of
Poisson intensities zeta proposes log-Gaussian spectral profiles anchored at
n (unit value at n, variance of log increments given by the variogram); a
proposal is kept only if it does not beat the already-final records at
earlier sites. The sweep terminates at each site once zeta drops below the
running record, giving exact joint draws, not truncations.

The increment covariance to anchor n depends on time only through the range
rho_t, which enters the variogram as a pure scale: gamma_t = rho_t^-alpha *
gamma_base. One Cholesky factor per anchor therefore serves every time point
after multiplying draws by rho_t^(-alpha/2); the factors are cached up to a
memory budget and recomputed per field beyond it.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .dependence import (ConstantRange, DependenceConfig,
                         config_from_gaussian_cov, lag_distance, log_range)

_ITER_CAP = 10**6
_EIG_CLIP = 1e-12


def as_rng(seed) -> np.random.Generator:
    """Accept a Generator, SeedSequence, int or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derived_rng(base_seed, *key) -> np.random.Generator:
    """Deterministic per-replicate stream: SeedSequence(base, spawn_key=key).

    Replicate k of an experiment uses derived_rng(seed, k); nested loops
    append further indices. Streams are independent of execution order.
    """
    return np.random.default_rng(np.random.SeedSequence(base_seed,
                                                        spawn_key=key))


class IncrementFactors:
    """Per-anchor factorizations of the unit-range increment covariance.

    For anchor n the vector (eps(s_d) - eps(s_n))_d has covariance
    C[i, j] = (gamma_n[i] + gamma_n[j] - gamma[i, j]) / 2 with gamma the
    unit-range variogram; the anchor row/column is identically zero and is
    dropped before factorization. Cholesky is attempted first; degenerate
    covariances (alpha = 2 with collinear sites) fall back to an
    eigendecomposition with eigenvalues clipped at 1e-12.
    """

    def __init__(self, cfg: DependenceConfig, coords: np.ndarray,
                 max_cache_bytes: int = 2 * 10**9):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must be (D, 2)")
        self.cfg = cfg
        self.coords = coords
        D = coords.shape[0]
        self.n_sites = D
        diff = coords[:, None, :] - coords[None, :, :]
        self.gamma_base = lag_distance(cfg.aniso, diff) ** cfg.alpha
        self._cache: dict[int, np.ndarray] = {}
        self._cache_enabled = D * max(D - 1, 1) ** 2 * 8 <= max_cache_bytes

    def _factor(self, anchor: int) -> np.ndarray:
        L = self._cache.get(anchor)
        if L is not None:
            return L
        D = self.n_sites
        keep = np.arange(D) != anchor
        g = self.gamma_base[anchor][keep]
        C = 0.5 * (g[:, None] + g[None, :] - self.gamma_base[np.ix_(keep, keep)])
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            w, V = np.linalg.eigh(C)
            scale = max(w[-1], 1.0)
            if w[0] < -1e-6 * scale:
                raise np.linalg.LinAlgError(
                    f"increment covariance at anchor {anchor} is not PSD "
                    f"(min eigenvalue {w[0]:.3g}) for alpha={self.cfg.alpha}; "
                    "check site coordinates") from None
            L = V * np.sqrt(np.clip(w, _EIG_CLIP, None))
        if self._cache_enabled:
            self._cache[anchor] = L
        return L

    def draw(self, anchor: int, rng: np.random.Generator,
             size: int | None = None) -> np.ndarray:
        """Unit-range increment draws anchored at `anchor`; 0 at the anchor."""
        L = self._factor(anchor)
        D = self.n_sites
        m = 1 if size is None else size
        z = rng.standard_normal((m, D - 1)) @ L.T
        out = np.zeros((m, D))
        keep = np.arange(D) != anchor
        out[:, keep] = z
        return out[0] if size is None else out


def _range_scales(cfg: DependenceConfig, enso, month, T: int) -> np.ndarray:
    """rho_t^(-alpha) for each time point (length T, or 1 when constant)."""
    lr = log_range(cfg, enso, month)
    if lr.size == 1 and T > 1:
        lr = np.repeat(lr, T)
    if lr.size != T:
        raise ValueError(f"covariates give {lr.size} time points, need {T}")
    return np.exp(-cfg.alpha * lr)


def _simulate_field(factors: IncrementFactors, gamma_scale: float,
                    rng: np.random.Generator, iter_cap: int) -> np.ndarray:
    D = factors.n_sites
    amp = math.sqrt(gamma_scale)
    Z = np.zeros(D)
    iters = 0
    for n in range(D):
        gamma_n = gamma_scale * factors.gamma_base[n]
        zeta = 1.0 / rng.standard_exponential()
        while zeta > Z[n]:
            iters += 1
            if iters > iter_cap:
                raise RuntimeError(
                    f"extremal-functions sampler exceeded {iter_cap} "
                    "proposals; range/alpha combination is likely pathological")
            eps = amp * factors.draw(n, rng)
            Y = np.exp(eps - 0.5 * gamma_n)
            cand = zeta * Y
            if n == 0 or not (cand[:n] >= Z[:n]).any():
                np.maximum(Z, cand, out=Z)
            zeta = 1.0 / (1.0 / zeta + rng.standard_exponential())
    return Z


def simulate_br(cfg: DependenceConfig, coords, x=None, seed=None,
                factors: IncrementFactors | None = None,
                iter_cap: int = _ITER_CAP) -> np.ndarray:
    """One exact Brown-Resnick draw on standard Frechet margins.

    x is the covariate point for a spline range model (ignored for a
    constant range). Pass a prebuilt IncrementFactors to amortize the
    factorization across calls with the same geometry.
    """
    rng = as_rng(seed)
    if factors is None:
        factors = IncrementFactors(cfg, np.asarray(coords, dtype=float))
    if isinstance(cfg.range_model, ConstantRange):
        scale = float(np.exp(-cfg.alpha * math.log(cfg.range_model.rho)))
    else:
        if x is None:
            raise ValueError("spline range model needs a covariate point x")
        scale = float(_range_scales(cfg, [x.enso], [float(x.month)], 1)[0])
    return _simulate_field(factors, scale, rng, iter_cap)


def simulate_br_panel(cfg: DependenceConfig, coords, enso=None, month=None,
                      T: int | None = None, seed=None,
                      iter_cap: int = _ITER_CAP) -> np.ndarray:
    """Independent Brown-Resnick fields for each time point, shape (T, D).

    For a constant range pass T; for a spline range pass per-time enso and
    month arrays. Fields are drawn sequentially from one stream, so a fixed
    seed fixes the whole panel.
    """
    rng = as_rng(seed)
    coords = np.asarray(coords, dtype=float)
    if isinstance(cfg.range_model, ConstantRange):
        if T is None:
            raise ValueError("constant range model needs T")
    else:
        if enso is None or month is None:
            raise ValueError("spline range model needs enso and month arrays")
        T = len(np.asarray(enso))
    scales = _range_scales(cfg, enso, month, T)
    if scales.size == 1:
        scales = np.repeat(scales, T)
    factors = IncrementFactors(cfg, coords)
    out = np.empty((T, coords.shape[0]))
    for i in range(T):
        out[i] = _simulate_field(factors, float(scales[i]), rng, iter_cap)
    return out


def simulate_smith(sigma, coords, seed=None, T: int | None = None):
    """Smith storm-profile field: Brown-Resnick with gamma(h) = h'Sigma^-1 h.

    Returns one field (D,) when T is None, else a (T, D) panel.
    """
    cfg = config_from_gaussian_cov(sigma)
    if T is None:
        return simulate_br(cfg, coords, seed=seed)
    return simulate_br_panel(cfg, coords, T=T, seed=seed)


def simulate_logistic(lam: float, D: int, size: int | None = None,
                      seed=None) -> np.ndarray:
    """Multivariate logistic max-stable vectors, dependence index lam.

    lam in (0, 1]: 1 is independence, ->0 comonotone; any pair has extremal
    coefficient 2^lam. Uses the positive-stable mixture: Z_d = (S / E_d)^lam
    with S one-sided lam-stable via the Chambers-Mallows-Stuck formula.
    """
    if not 0 < lam <= 1:
        raise ValueError(f"lam must be in (0, 1], got {lam}")
    rng = as_rng(seed)
    m = 1 if size is None else size
    E = rng.standard_exponential((m, D))
    if lam == 1.0:
        Z = 1.0 / E
    else:
        # log space: the stable-variate powers overflow for small lam
        U = rng.uniform(0.0, math.pi, size=m)
        W = rng.standard_exponential(m)
        lam_log_s = ((1.0 - lam) * (np.log(np.sin((1.0 - lam) * U))
                                    - np.log(W))
                     + lam * np.log(np.sin(lam * U)) - np.log(np.sin(U)))
        Z = np.exp(lam_log_s[:, None] - lam * np.log(E))
    return Z[0] if size is None else Z


def frechet_margin_error(q: np.ndarray, W: np.ndarray) -> float:
    """Max deviation of sum_i q_i W_i from the uniform vector 1/D.

    Zero is exactly the condition under which simulate_empirical_spectral
    has standard Frechet margins.
    """
    q = np.asarray(q, dtype=float)
    W = np.asarray(W, dtype=float)
    return float(np.max(np.abs(q @ W - 1.0 / W.shape[1])))


def simulate_empirical_spectral(q, W, size: int | None = None, seed=None,
                                check_margins: bool = True,
                                iter_cap: int = _ITER_CAP) -> np.ndarray:
    """Max-stable vectors from a discrete spectral measure (atoms W, probs q).

    Sweeps a decreasing Poisson sequence R* = D / E*, at each step lifting
    the running maximum by R* times an atom drawn with probability q, and
    stops once R* falls below the smallest component. Margins are standard
    Frechet exactly when sum_i q_i W_i = 1/D; a violation beyond 1e-6 emits
    a warning (callers record it in their report metadata).
    """
    q = np.asarray(q, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or q.shape != (W.shape[0],):
        raise ValueError("W must be (n_atoms, D) with matching q")
    if q.size == 0 or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("q must be a probability vector")
    if np.any(W < 0):
        raise ValueError("spectral atoms must be nonnegative")
    if check_margins:
        err = frechet_margin_error(q, W)
        if err > 1e-6:
            warnings.warn(
                f"spectral atoms violate the standard-Frechet margin "
                f"condition by {err:.3g}; simulated margins are biased",
                RuntimeWarning, stacklevel=2)
    rng = as_rng(seed)
    D = W.shape[1]
    cumq = np.cumsum(q)
    cumq[-1] = 1.0
    m = 1 if size is None else size
    out = np.empty((m, D))
    for k in range(m):
        Z = np.zeros(D)
        R = D / rng.standard_exponential()
        iters = 0
        while R > Z.min():
            iters += 1
            if iters > iter_cap:
                raise RuntimeError(
                    f"spectral sampler exceeded {iter_cap} proposals")
            atom = W[np.searchsorted(cumq, rng.random(), side="right")]
            np.maximum(Z, R * atom, out=Z)
            R = 1.0 / (1.0 / R + rng.standard_exponential() / D)
        out[k] = Z
    return out[0] if size is None else out
