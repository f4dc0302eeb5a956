"""Numerical integration and 1-D refinement helpers.

The adaptive Simpson routine integrates a vector-valued integrand over a set
of initial panels in one batched pass per refinement level, so Gram entries
and per-bin integrals for every basis element are produced together.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import QuadratureError

DEFAULT_TOL = 1e-10
MAX_INTERVALS = 2**20


def adaptive_simpson(func, edges, tol=DEFAULT_TOL, max_intervals=MAX_INTERVALS):
    """Integrate ``func`` over each panel ``[edges[i], edges[i+1]]``.

    Parameters
    ----------
    func : callable
        Maps a 1-D array of ``P`` points to an array of shape ``(P, K)``.
    edges : array_like
        Strictly increasing panel boundaries.
    tol : float
        Absolute tolerance for every component of the *total* integral. Each
        interval is accepted once its local error is below its share
        ``tol * width / length``.
    max_intervals : int
        Refinement cap; exceeding it raises :class:`QuadratureError`.

    Returns
    -------
    integrals : ndarray, shape (n_panels, K)
    error : float
        Sum of accepted local error estimates (max over components).
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be a strictly increasing 1-D array")
    length = edges[-1] - edges[0]

    a = edges[:-1].copy()
    b = edges[1:].copy()
    owner = np.arange(a.size)
    m = 0.5 * (a + b)
    fa, fm, fb = _batched(func, a, m, b)
    whole = (b - a)[:, None] / 6.0 * (fa + 4.0 * fm + fb)

    out = np.zeros((a.size, fa.shape[1]))
    err_total = 0.0
    n_intervals = a.size
    while a.size:
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = _batched(func, lm, rm)
        h = (m - a)[:, None] / 6.0
        left = h * (fa + 4.0 * flm + fm)
        right = h * (fm + 4.0 * frm + fb)
        diff = left + right - whole
        err = np.max(np.abs(diff), axis=1) / 15.0
        width = b - a
        # Intervals at float resolution cannot be refined further.
        done = (err <= tol * width / length) | (width <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(m)))
        if np.any(done):
            np.add.at(out, owner[done], left[done] + right[done] + diff[done] / 15.0)
            err_total += float(np.sum(err[done]))
        keep = ~done
        if not np.any(keep):
            break
        n_intervals += int(np.count_nonzero(keep))
        if n_intervals > max_intervals:
            pending = float(np.sum(err[keep]))
            raise QuadratureError(
                f"adaptive Simpson exceeded {max_intervals} subintervals "
                f"(estimated error {err_total + pending:.3e})",
                error_estimate=err_total + pending,
            )
        a_k, m_k, b_k = a[keep], m[keep], b[keep]
        a = np.concatenate([a_k, m_k])
        b = np.concatenate([m_k, b_k])
        m = 0.5 * (a + b)
        fa = np.concatenate([fa[keep], fm[keep]])
        fb = np.concatenate([fm[keep], fb[keep]])
        fm = np.concatenate([flm[keep], frm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        owner = np.concatenate([owner[keep], owner[keep]])
    return out, err_total


def _batched(func, *points):
    sizes = [p.size for p in points]
    values = np.asarray(func(np.concatenate(points)), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return np.split(values, np.cumsum(sizes)[:-1])


def gauss_legendre_nodes(lower, upper, panels=64, points=16):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[lower, upper]``."""
    if panels < 1 or points < 1:
        raise ValueError("panels and points must be positive")
    xi, wi = np.polynomial.legendre.leggauss(points)
    edges = np.linspace(lower, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * xi[None, :]).ravel()
    weights = (half[:, None] * wi[None, :]).ravel()
    return nodes, weights


def refine_extremum(func, lower, upper, maximize=False, xtol=1e-10):
    """Locally refine a scalar extremum on ``[lower, upper]``.

    Returns ``(t, value)``; the endpoints are always considered so a bracket
    whose interior is monotone still returns its best boundary value.
    """
    sign = -1.0 if maximize else 1.0
    best_t, best_v = lower, func(lower)
    v_hi = func(upper)
    if sign * v_hi < sign * best_v:
        best_t, best_v = upper, v_hi
    if upper > lower:
        res = minimize_scalar(lambda t: sign * func(t), bounds=(lower, upper),
                              method="bounded", options={"xatol": xtol})
        if sign * func(res.x) < sign * best_v:
            best_t = float(res.x)
            best_v = func(best_t)
    return best_t, best_v
