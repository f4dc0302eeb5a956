"""Constrained maximum-likelihood estimation.

Each iteration minimizes a quadratic model of the negative log-likelihood
(Hessian metric) over the feasible set and backtracks along the resulting
direction with a monotone Armijo rule. If that direction fails, a projected
gradient step (Barzilai-Borwein length) is used instead. The feasible set is
``X ∩ R``: ``X`` collects the user constraints, ``R`` requires a nonnegative
intensity on a check grid. All constraints are linear (an l1 ball enters as
cuts), so every subproblem is a small QP over a screened working set.
Convergence is measured by the Euclidean projected-gradient residual.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import quadprog

from .basis import gram_matrix
from .errors import CapacityError, InitializationError
from .likelihood import (CHECK_GRID_SIZE, FeasibilityReport, LikelihoodContext, _Terms,
                         feasibility_margin)
from .process import CountData, EventSet, bin_counts, bin_edges

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE_N = 20


@dataclass(frozen=True)
class IntensityBox:
    r_max: float
    check_grid_size: int = CHECK_GRID_SIZE


def naive_r_max(data, m0: int = 10) -> float:
    """Heuristic intensity ceiling: the largest empirical rate ``count / width``.

    ``data`` is a ``CountData`` (its own bins are used) or an ``EventSet``
    (binned into ``m0`` equal bins). This is a plug-in guess with no coverage
    guarantee; it underestimates narrow peaks and is noisy for small counts.
    """
    if isinstance(data, CountData):
        edges, counts = data.edges, data.counts
    elif isinstance(data, EventSet):
        edges = bin_edges(data.domain, m0)
        counts = bin_counts(data, edges)
    else:
        raise TypeError("data must be CountData or EventSet")
    rate = float(np.max(counts / np.diff(edges)))
    if not rate > 0:
        raise ValueError("no events: the empirical rate is zero")
    return rate


@dataclass(frozen=True)
class ConstraintSet:
    """User constraints ``X``; nonnegativity of the intensity is always added."""

    l1_radius: float | None = None
    nonnegative_coeffs: bool = False
    fixed_support: tuple | None = None
    intensity_box: IntensityBox | None = None
    check_grid_size: int = CHECK_GRID_SIZE

    def __post_init__(self):
        if self.l1_radius is not None and not self.l1_radius > 0:
            raise ValueError("l1_radius must be positive")
        if self.fixed_support is not None:
            s = tuple(sorted({int(i) for i in self.fixed_support}))
            if not s or s[0] < 0:
                raise ValueError("fixed_support must be a non-empty set of indices")
            object.__setattr__(self, "fixed_support", s)


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 50_000
    tol: float = 1e-8
    armijo: float = 1e-4
    record_history: bool = False
    method: str = "scaled"

    def __post_init__(self):
        if self.method not in ("scaled", "gradient"):
            raise ValueError("method must be 'scaled' or 'gradient'")
        if self.max_iters < 0 or not self.tol > 0:
            raise ValueError("need max_iters >= 0 and tol > 0")


@dataclass
class SolveResult:
    x_hat: np.ndarray
    nll_value: float
    iterations: int
    kkt_residual: float
    converged: bool
    feasibility: FeasibilityReport
    support: tuple = ()
    message: str = ""
    nll_history: list = field(default_factory=list)
    supports_evaluated: int = 1
    optimality_guaranteed: bool = True

    def to_dict(self) -> dict:
        return {
            "x_hat": [float(v) for v in self.x_hat],
            "nll": float(self.nll_value),
            "iterations": int(self.iterations),
            "kkt_residual": float(self.kkt_residual),
            "converged": bool(self.converged),
            "support": list(self.support),
            "message": self.message,
            "supports_evaluated": int(self.supports_evaluated),
            "optimality_guaranteed": bool(self.optimality_guaranteed),
            "feasibility": self.feasibility.to_dict(),
        }


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------


def project_l1(x, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{z : ||z||_1 <= radius}`` (sort-based, exact)."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    u = np.abs(x)
    if u.sum() <= radius:
        return x.copy()
    mu = np.sort(u)[::-1]
    css = np.cumsum(mu)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(mu * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(x) * np.maximum(u - theta, 0.0)


def _most_negative(s, k):
    neg = np.nonzero(s < 0)[0]
    if neg.size > k:
        neg = neg[np.argpartition(s[neg], k)[:k]]
    return neg


class _Projector:
    """Minimization of quadratics over ``{z : C z >= h}``, optionally within an l1 ball.

    Calling the object gives the Euclidean projection. :meth:`solve` accepts
    any positive definite metric, which yields scaled (Newton-type) steps.
    Rows are screened: each QP sees only a working set, grown by the most
    violated rows until every row holds. The l1 ball enters as lazily
    generated cuts ``sign(w) . z <= radius``.
    """

    def __init__(self, C, h, l1_radius=None):
        norms = np.linalg.norm(C, axis=1)
        zero = norms <= 1e-14
        if np.any(h[zero] > 1e-12):
            raise InitializationError("constraint set is empty")
        C, h, norms = C[~zero], h[~zero], norms[~zero]
        C = C / norms[:, None]
        h = h / norms
        _, idx = np.unique(np.round(np.column_stack([C, h]), 13), axis=0, return_index=True)
        idx.sort()
        self.C, self.h = C[idx], h[idx]
        self.l1 = l1_radius
        self.tol = 1e-11
        self.scale = None
        self._cuts = {}
        self._working = np.empty(0, dtype=int)

    def slack(self, z):
        return self.C @ z - self.h

    def contains(self, z, tol=None):
        """Membership up to ``tol`` (default: relative to the current iterate scale)."""
        if tol is None:
            tol = self._tol(z)
        ok = self.C.shape[0] == 0 or self.slack(z).min() >= -tol
        if ok and self.l1 is not None:
            ok = np.abs(z).sum() <= self.l1 + tol
        return bool(ok)

    def __call__(self, v):
        return self.solve(v)

    def _tol(self, z):
        # While solving, ``scale`` tracks the iterate's magnitude so that a
        # far-away target (an ill-conditioned Newton point) cannot loosen the check.
        if self.scale is not None:
            return self.tol * self.scale
        return self.tol * (1.0 + (float(np.abs(z).max()) if z.size else 0.0))

    def solve(self, v, G=None):
        """Minimize ``(w - v)' G (w - v)`` over the feasible set (``G = I`` if omitted)."""
        v = np.asarray(v, dtype=float)
        tol = self._tol(v)
        if self.contains(v, tol):
            return v.copy()
        if G is None:
            G = np.eye(v.size)
            a = v
        else:
            a = G @ v
        batch = 2 * v.size + 4
        work = np.union1d(self._working, _most_negative(self.slack(v), batch)).astype(int)
        for _ in range(500):
            w, act = self._qp(G, a, work)
            s = self.slack(w)
            s[work] = np.inf
            new = _most_negative(np.where(s < -tol, s, 0.0), batch)
            if self.l1 is not None and np.abs(w).sum() > self.l1 + tol:
                cut = self._cut(np.sign(w))
                if cut not in work:
                    new = np.append(new, cut)
            if new.size == 0:
                self._working = work[act]
                return w
            work = np.union1d(work, new).astype(int)
        raise RuntimeError("working-set projection did not settle")

    def _cut(self, sign):
        key = sign.astype(np.int8).tobytes()
        if key not in self._cuts:
            nrm = np.linalg.norm(sign)
            self.C = np.vstack([self.C, -sign / nrm])
            self.h = np.append(self.h, -self.l1 / nrm)
            self._cuts[key] = self.C.shape[0] - 1
        return self._cuts[key]

    def _qp(self, G, a, work):
        if work.size == 0:
            return np.linalg.solve(G, a), np.empty(0, dtype=int)
        C, h = self.C[work], self.h[work]
        try:
            w, _, _, _, _, iact = quadprog.solve_qp(G, a, C.T.copy(), h)
        except ValueError as exc:
            if "inconsistent" not in str(exc):
                raise
            # Nearly parallel rows can trip the dual active-set method; relax slightly.
            w, _, _, _, _, iact = quadprog.solve_qp(G, a, C.T.copy(), h - 1e-12)
        act = iact[iact > 0] - 1
        return w, act


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------


class _Problem:
    def __init__(self, ctx: LikelihoodContext, constraints: ConstraintSet, which):
        basis = ctx.basis
        n = basis.n
        support = constraints.fixed_support
        if support is not None and support[-1] >= n:
            raise ValueError("fixed_support index out of range")
        if support is None or len(support) == n:
            self.support = tuple(range(n))
            self.full = True
        else:
            self.support = support
            self.full = False
        cols = list(self.support)
        self.n = n
        self.ctx = ctx
        self.which = which
        terms = ctx.terms(which)
        if self.full:
            self.terms = terms
        else:
            self.terms = _Terms(terms.const, terms.lin[cols], np.ascontiguousarray(terms.rows[:, cols]),
                                terms.shift, terms.weight)
        pts = basis.check_points(constraints.check_grid_size)
        blocks_C = [basis.evaluate(pts)[:, cols]]
        blocks_h = [-basis.offset_at(pts)]
        if constraints.nonnegative_coeffs:
            blocks_C.append(np.eye(len(cols)))
            blocks_h.append(np.zeros(len(cols)))
        box = constraints.intensity_box
        if box is not None:
            bp = basis.check_points(box.check_grid_size)
            blocks_C.append(-basis.evaluate(bp)[:, cols])
            blocks_h.append(basis.offset_at(bp) - box.r_max)
        self.project = _Projector(np.vstack(blocks_C), np.concatenate(blocks_h), constraints.l1_radius)
        self.constraints = constraints

    def embed(self, z):
        if self.full:
            return z.copy()
        x = np.zeros(self.n)
        x[list(self.support)] = z
        return x

    def restrict(self, x):
        return np.asarray(x, dtype=float)[list(self.support)]


def _data_size(ctx):
    data = ctx.data
    return float(data.total if ctx.mode == "counting" else data.count)


def _initial_point(prob: _Problem, init):
    terms = prob.terms
    if init is not None:
        z = prob.restrict(init)
        if not prob.project.contains(z, tol=1e-9) or not np.isfinite(terms.value(z)):
            raise InitializationError("supplied init is not strictly feasible")
        return z
    ctx = prob.ctx
    cols = list(prob.support)
    b = ctx.b[cols]
    target = max(_data_size(ctx), 1.0)
    gram = gram_matrix(ctx.basis)[np.ix_(cols, cols)]
    directions = [np.linalg.lstsq(gram, b, rcond=None)[0], np.ones(len(cols))]
    if prob.constraints.nonnegative_coeffs:
        directions = [np.maximum(d, 0.0) for d in directions]
    l1 = prob.constraints.l1_radius
    for d in directions:
        mass = float(b @ d)
        if not mass > 0:
            continue
        z = d * (target / mass)
        if l1 is not None and np.abs(z).sum() > 0.5 * l1:
            z *= 0.5 * l1 / np.abs(z).sum()
        for _ in range(60):
            if prob.project.contains(z) and np.isfinite(terms.value(z)):
                return z
            z = 0.5 * z
    z = np.zeros(len(cols))
    if prob.project.contains(z) and np.isfinite(terms.value(z)):
        return z
    raise InitializationError("no strictly feasible starting point found")


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


def _directions(terms, project, z, g, step, scaled=True):
    """Candidate search directions: a scaled (Newton-type) step, then projected gradient."""
    H = terms.hessian(z) if scaled else None
    scale = float(np.max(np.diag(H))) if scaled and H.size else 0.0
    if scale > 0:
        G = H + 1e-10 * scale * np.eye(z.size)
        try:
            v = z - np.linalg.solve(G, g)
            if np.all(np.isfinite(v)):
                yield project.solve(v, G) - z
        except (np.linalg.LinAlgError, ValueError):
            pass
    yield project(z - step * g) - z
    yield project(z - g) - z


def _line_search(terms, project, z, f, g, d, armijo):
    slope = float(g @ d)
    if not slope < 0:
        return None, None
    alpha = 1.0
    while alpha >= 1e-30:
        z_new = z + alpha * d
        f_new = terms.value(z_new)
        if f_new <= f + armijo * alpha * slope and project.contains(z_new):
            return z_new, f_new
        alpha *= 0.5
    return None, None


def _polish(terms, project, z, f, g, kkt, rounds=3):
    """Extra full scaled steps after convergence, kept while the residual shrinks.

    Near the optimum the change in ``f`` is at rounding level, so a step is
    accepted if ``f`` rises by no more than a few ulps of the summed terms.
    """
    eps = np.finfo(float).eps
    for _ in range(rounds):
        d = next(_directions(terms, project, z, g, 1.0))
        z_new = z + d
        f_new, g_new = terms.value_and_grad(z_new)
        slack = 16 * eps * (1.0 + terms.magnitude(z))
        if not f_new <= f + slack or not project.contains(z_new):
            break
        kkt_new = float(np.linalg.norm(z_new - project(z_new - g_new)))
        if not kkt_new < kkt:
            break
        z, f, g, kkt = z_new, f_new, g_new, kkt_new
    return z, f, g, kkt


def estimate_mle(ctx: LikelihoodContext, constraints: ConstraintSet | None = None,
                 init=None, options: SolveOptions | None = None,
                 which: str | None = None) -> SolveResult:
    """Minimize the negative log-likelihood over ``X ∩ R``.

    Parameters
    ----------
    ctx : LikelihoodContext
    constraints : ConstraintSet, optional
    init : array_like, optional
        Strictly feasible starting point (full length ``N``). Starting from the
        true coefficients guarantees ``nll(x_hat) <= nll(x_true)``.
    options : SolveOptions, optional
    which : str, optional
        Likelihood kind; defaults to the context's kind.

    Returns
    -------
    SolveResult
        ``converged`` is False when the iteration cap is hit or the line
        search stalls; the last iterate is still returned.
    """
    constraints = constraints or ConstraintSet()
    options = options or SolveOptions()
    prob = _Problem(ctx, constraints, which)
    terms, project = prob.terms, prob.project
    z = _initial_point(prob, init)
    f, g = terms.value_and_grad(z)
    history = [f] if options.record_history else []
    gnorm = np.linalg.norm(g)
    step = 1.0 / gnorm if gnorm > 0 else 1.0
    kkt = np.inf
    message = "iteration limit reached"
    converged = False
    it = 0
    for it in range(options.max_iters + 1):
        project.scale = 1.0 + float(np.abs(z).max())
        kkt = float(np.linalg.norm(z - project(z - g)))
        if kkt <= options.tol * (1.0 + abs(f)):
            converged = True
            message = "converged"
            if options.method == "scaled":
                z, f, g, kkt = _polish(terms, project, z, f, g, kkt)
            break
        if it == options.max_iters:
            break
        z_new = f_new = None
        for direction in _directions(terms, project, z, g, step, options.method == "scaled"):
            z_new, f_new = _line_search(terms, project, z, f, g, direction, options.armijo)
            if z_new is not None:
                break
        if z_new is None:
            message = "line search stalled"
            break
        _, g_new = terms.value_and_grad(z_new)
        s_vec, y_vec = z_new - z, g_new - g
        sy = float(s_vec @ y_vec)
        step = float(s_vec @ s_vec) / sy if sy > 0 else step * 10.0
        step = min(max(step, 1e-12), 1e12)
        z, f, g = z_new, f_new, g_new
        if options.record_history:
            history.append(f)
    x = prob.embed(z)
    box = constraints.intensity_box
    feas = feasibility_margin(ctx.basis, x, None if box is None else box.r_max)
    if not converged:
        log.debug("solve stopped: %s (kkt=%.3e, iters=%d)", message, kkt, it)
    return SolveResult(x, f, it, kkt, converged, feas, prob.support, message, history)


def estimate_mle_sparse(ctx: LikelihoodContext, s: int, constraints: ConstraintSet | None = None,
                        options: SolveOptions | None = None, mode: str = "exhaustive",
                        which: str | None = None) -> SolveResult:
    """MLE restricted to at most ``s`` nonzero coefficients.

    ``mode="exhaustive"`` solves the restricted problem on every support of
    size ``s`` and keeps the lowest NLL (ties go to the lexicographically
    smallest support). ``mode="iterative"`` runs hard-thresholding pursuit:
    cheap, but without an optimality guarantee.
    """
    constraints = constraints or ConstraintSet()
    n = ctx.n
    if not 1 <= s <= n:
        raise ValueError(f"sparsity must be in 1..{n}")
    if constraints.fixed_support is not None:
        raise ValueError("fixed_support cannot be combined with a sparsity search")
    if mode == "exhaustive":
        if n > MAX_EXHAUSTIVE_N:
            raise CapacityError(f"exhaustive search limited to N <= {MAX_EXHAUSTIVE_N}")
        best = None
        count = 0
        for support in itertools.combinations(range(n), s):
            count += 1
            cs = _replace(constraints, fixed_support=support)
            res = estimate_mle(ctx, cs, options=options, which=which)
            if best is None or res.nll_value < best.nll_value:
                best = res
        best.supports_evaluated = count
        return best
    if mode != "iterative":
        raise ValueError("mode must be 'exhaustive' or 'iterative'")
    full = estimate_mle(ctx, constraints, options=options, which=which)
    support = tuple(sorted(np.argsort(-np.abs(full.x_hat), kind="stable")[:s].tolist()))
    best = estimate_mle(ctx, _replace(constraints, fixed_support=support), options=options, which=which)
    evaluated = 1
    terms = ctx.terms(which)
    for _ in range(50):
        grad = terms.gradient(best.x_hat) if np.isfinite(best.nll_value) else None
        if grad is None:
            break
        scale = max(np.abs(best.x_hat).max(), 1.0) / max(np.abs(grad).max(), 1e-300)
        trial = best.x_hat - scale * grad
        cand = tuple(sorted(np.argsort(-np.abs(trial), kind="stable")[:s].tolist()))
        if cand == best.support:
            break
        res = estimate_mle(ctx, _replace(constraints, fixed_support=cand), options=options, which=which)
        evaluated += 1
        if not res.nll_value < best.nll_value:
            break
        best = res
    best.supports_evaluated = evaluated
    best.optimality_guaranteed = False
    return best


def _replace(cs: ConstraintSet, **kw) -> ConstraintSet:
    params = dict(cs.__dict__)
    params.update(kw)
    return ConstraintSet(**params)
