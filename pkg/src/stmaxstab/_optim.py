"""Batched Nelder-Mead simplex minimizer.

Runs B independent low-dimensional minimizations in lockstep so the objective
is evaluated as one vectorized call per candidate set instead of B round
trips through a generic scalar optimizer. This is what makes the per-site
margin refits inside bootstrap and max-stability-test loops affordable on a
single core.

Semantics follow the standard simplex recipe (reflection 1, expansion 2,
contraction 0.5, shrink 0.5); objectives may return +inf for out-of-domain
points.
"""

from __future__ import annotations

import numpy as np

__all__ = ["nelder_mead_batch"]


def _initial_simplex(x0: np.ndarray) -> np.ndarray:
    """Axis-aligned start simplex, 5% relative steps (0.00025 at zeros)."""
    B, n = x0.shape
    simplex = np.repeat(x0[:, None, :], n + 1, axis=1)
    for j in range(n):
        step = np.where(x0[:, j] != 0.0, 0.05 * x0[:, j], 0.00025)
        simplex[:, j + 1, j] += step
    return simplex


def nelder_mead_batch(fun, x0, xatol=1e-5, fatol=1e-9, maxiter=400):
    """Minimize B independent functions of n variables.

    Parameters
    ----------
    fun : callable
        ``fun(points, which)`` maps an (M, n) array of points plus an (M,)
        int array of problem indices to an (M,) array of values, evaluating
        row k on problem ``which[k]``'s data. +inf marks infeasible points.
    x0 : ndarray, shape (B, n)
        Starting points, one row per problem.
    xatol, fatol : float
        Convergence: simplex coordinate spread below ``xatol * (1 + |x|)``
        and value spread below ``fatol * (1 + |f_best|)``.
    maxiter : int
        Iteration cap; unconverged problems are flagged, not raised.

    Returns
    -------
    x : (B, n) best points, f : (B,) values, converged : (B,) bool,
    niter : int iterations actually run.
    """
    x0 = np.asarray(x0, dtype=float)
    B, n = x0.shape
    all_idx = np.arange(B)
    simplex = _initial_simplex(x0)
    fvals = np.empty((B, n + 1))
    for j in range(n + 1):
        fvals[:, j] = _safe(fun(simplex[:, j, :], all_idx))

    converged = np.zeros(B, dtype=bool)
    niter = 0
    while niter < maxiter:
        order = np.argsort(fvals, axis=1, kind="stable")
        fvals = np.take_along_axis(fvals, order, axis=1)
        simplex = np.take_along_axis(simplex, order[:, :, None], axis=1)

        fbest, fworst = fvals[:, 0], fvals[:, -1]
        xspread = np.max(
            np.abs(simplex - simplex[:, :1, :]).reshape(B, -1), axis=1
        )
        xscale = 1.0 + np.max(np.abs(simplex[:, 0, :]), axis=1)
        with np.errstate(invalid="ignore"):
            fspread_ok = (fworst - fbest) <= fatol * (1.0 + np.abs(fbest))
        converged = (xspread <= xatol * xscale) & fspread_ok & np.isfinite(fbest)
        if converged.all():
            break
        niter += 1

        active = ~converged
        centroid = simplex[:, :-1, :].mean(axis=1)
        worst = simplex[:, -1, :]
        xr = centroid + (centroid - worst)
        xe = centroid + 2.0 * (centroid - worst)
        xoc = centroid + 0.5 * (centroid - worst)
        xic = centroid - 0.5 * (centroid - worst)
        cand = np.concatenate([xr, xe, xoc, xic], axis=0)
        fc = _safe(fun(cand, np.tile(all_idx, 4)))
        fr, fe, foc, fic = fc[:B], fc[B : 2 * B], fc[2 * B : 3 * B], fc[3 * B :]

        fsecond = fvals[:, -2]
        new_x = worst.copy()
        new_f = fworst.copy()

        m_expand = fr < fbest
        take_e = m_expand & (fe < fr)
        take_r = (m_expand & ~take_e) | (~m_expand & (fr < fsecond))
        m_oc = ~m_expand & ~take_r & (fr < fworst)
        take_oc = m_oc & (foc <= fr)
        m_ic = ~m_expand & ~take_r & ~m_oc
        take_ic = m_ic & (fic < fworst)
        shrink = (m_oc & ~take_oc) | (m_ic & ~take_ic)

        for mask, xs, fs in (
            (take_e, xe, fe),
            (take_r, xr, fr),
            (take_oc, xoc, foc),
            (take_ic, xic, fic),
        ):
            mask = mask & active
            new_x[mask] = xs[mask]
            new_f[mask] = fs[mask]
        upd = active & ~shrink
        simplex[upd, -1, :] = new_x[upd]
        fvals[upd, -1] = new_f[upd]

        shrink &= active
        if shrink.any():
            idx = np.flatnonzero(shrink)
            best = simplex[idx, :1, :]
            simplex[idx, 1:, :] = best + 0.5 * (simplex[idx, 1:, :] - best)
            flat = simplex[idx, 1:, :].reshape(-1, n)
            which = np.repeat(idx, n)
            fvals[idx, 1:] = _safe(fun(flat, which)).reshape(len(idx), n)

    order = np.argsort(fvals, axis=1, kind="stable")
    fvals = np.take_along_axis(fvals, order, axis=1)
    simplex = np.take_along_axis(simplex, order[:, :, None], axis=1)
    return simplex[:, 0, :], fvals[:, 0], converged, niter


def _safe(f):
    f = np.asarray(f, dtype=float)
    return np.where(np.isnan(f), np.inf, f)
