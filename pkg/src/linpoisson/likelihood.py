"""Negative log-likelihoods of the arrival and counting models.

Every likelihood handled here has the form

    const + lin . x - sum_i w_i * log(shift_i + rows_i . x)

so values, gradients and Hessians share one implementation (``_Terms``).
A log argument that is not strictly positive (for a row with positive
weight) makes the value ``+inf``; line searches rely on this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, element_integrals, offset_integral
from .errors import FeasibilityError
from .process import CountData, EventSet, bin_counts
from .quadrature import gauss_legendre_nodes, refine_extremum

KINDS = ("arrival", "counting", "augmented", "det")
FEASIBILITY_TOL = 1e-9
CHECK_GRID_SIZE = 4096


@dataclass(frozen=True)
class Regularizer:
    """Deterministic regularization weight and its Gauss-Legendre rule."""

    beta: float
    panels: int = 64
    points: int = 16

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.panels < 1 or self.points < 2:
            raise ValueError("need at least one panel and two points per panel")

    @property
    def quadrature_points(self) -> int:
        return self.panels * self.points


@dataclass(frozen=True, eq=False)
class _Terms:
    const: float
    lin: np.ndarray
    rows: np.ndarray
    shift: np.ndarray
    weight: np.ndarray

    @classmethod
    def build(cls, const, lin, rows, shift, weight):
        weight = np.asarray(weight, dtype=float)
        keep = weight > 0
        return cls(float(const), np.asarray(lin, dtype=float),
                   np.ascontiguousarray(rows[keep]), shift[keep], weight[keep])

    def args(self, x):
        return self.shift + self.rows @ x

    def value(self, x):
        z = self.args(x)
        if z.size and not np.all(z > 0):
            return np.inf
        return self.const + float(self.lin @ x) - float(self.weight @ np.log(z))

    def magnitude(self, x):
        """Sum of the absolute values of the terms in :meth:`value` (its rounding scale)."""
        z = self.args(x)
        return abs(self.const) + abs(float(self.lin @ x)) + float(self.weight @ np.abs(np.log(np.abs(z) + 1e-300)))

    def value_and_grad(self, x):
        z = self.args(x)
        if z.size and not np.all(z > 0):
            return np.inf, None
        val = self.const + float(self.lin @ x) - float(self.weight @ np.log(z))
        return val, self.lin - self.rows.T @ (self.weight / z)

    def gradient(self, x):
        z = self._strict(x)
        return self.lin - self.rows.T @ (self.weight / z)

    def hessian(self, x):
        z = self._strict(x)
        scaled = self.rows * np.sqrt(self.weight / z**2)[:, None]
        return scaled.T @ scaled

    def _strict(self, x):
        z = self.args(x)
        if z.size and not np.all(z > 0):
            i = int(np.argmin(z))
            raise FeasibilityError("x is not strictly feasible for this likelihood",
                                   worst_point=i, worst_value=float(z[i]))
        return z


class LikelihoodContext:
    """Data, model and precomputed quantities for evaluating a likelihood.

    Parameters
    ----------
    basis : BasisSpec
    data : EventSet or CountData
        Arrival coordinates (arrival mode) or bin counts (counting mode).
    augmentation : EventSet, optional
        Synthetic homogeneous events of known rate ``beta``.
    beta : float
        Rate of the augmentation process.
    regularizer : Regularizer, optional
        Deterministic regularization; excludes ``augmentation``.
    """

    def __init__(self, basis: BasisSpec, data, augmentation: EventSet | None = None,
                 beta: float = 0.0, regularizer: Regularizer | None = None):
        if augmentation is not None and regularizer is not None:
            raise ValueError("augmentation and regularizer are mutually exclusive")
        if not beta >= 0:
            raise ValueError("beta must be nonnegative")
        self.basis = basis
        self.data = data
        self.augmentation = augmentation
        self.regularizer = regularizer
        self.beta = float(regularizer.beta if regularizer is not None else beta)
        self.b = element_integrals(basis)
        if isinstance(data, EventSet):
            self.mode = "arrival"
            self.A = basis.evaluate(data.coordinates)
            self.g_at_events = basis.offset_at(data.coordinates)
        elif isinstance(data, CountData):
            if data.design_rows.shape[1] != basis.n:
                raise ValueError("count data was built for a different basis")
            self.mode = "counting"
            self.A = np.asarray(data.design_rows)
            self.g_at_events = np.asarray(data.g_integrals)
        else:
            raise TypeError("data must be an EventSet or CountData")
        if augmentation is not None:
            self.kind = "augmented"
        elif regularizer is not None:
            self.kind = "det"
        else:
            self.kind = self.mode
        self._terms = {}

    @property
    def n(self) -> int:
        return self.basis.n

    def with_data(self, data) -> "LikelihoodContext":
        return LikelihoodContext(self.basis, data, self.augmentation, self.beta, self.regularizer)

    def terms(self, which: str | None = None) -> _Terms:
        which = which or self.kind
        if which not in self._terms:
            self._terms[which] = self._build(which)
        return self._terms[which]

    def _build(self, which):
        if which not in KINDS:
            raise ValueError(f"unknown likelihood kind {which!r}")
        ones = np.ones(self.A.shape[0])
        if self.mode == "arrival":
            lin = self.b
            base = (self.A, self.g_at_events, ones)
        else:
            counts = self.data.counts.astype(float)
            lin = self.A.sum(axis=0)
            base = (self.A, self.g_at_events, counts)
        if which in ("arrival", "counting"):
            if which != self.mode:
                raise ValueError(f"{which} likelihood needs {which} data")
            return _Terms.build(0.0, lin, *base)
        beta = self.beta
        if which == "augmented":
            if self.augmentation is None:
                raise ValueError("augmented likelihood needs an augmentation event set")
            rho = self.augmentation
            if self.mode == "arrival":
                rows = np.vstack([self.A, self.basis.evaluate(rho.coordinates)])
                shift = np.concatenate([self.g_at_events, self.basis.offset_at(rho.coordinates)]) + beta
                weight = np.ones(rows.shape[0])
                return _Terms.build(offset_integral(self.basis), lin, rows, shift, weight)
            extra = bin_counts(rho, self.data.edges).astype(float)
            shift = self.g_at_events + beta * self.data.widths
            return _Terms.build(float(np.sum(self.g_at_events)), lin, self.A, shift, counts + extra)
        # det
        if self.regularizer is None:
            raise ValueError("regularized likelihood needs a regularizer")
        if self.mode == "arrival":
            dom = self.basis.domain
            nodes, w = gauss_legendre_nodes(dom.lower, dom.upper, self.regularizer.panels,
                                            self.regularizer.points)
            rows = np.vstack([self.A, self.basis.evaluate(nodes)])
            shift = np.concatenate([self.g_at_events, self.basis.offset_at(nodes)]) + beta
            weight = np.concatenate([ones, beta * w])
            return _Terms.build(0.0, lin, rows, shift, weight)
        # Counting analogue: the augmentation counts are replaced by their means.
        widths = self.data.widths
        shift = self.g_at_events + beta * widths
        return _Terms.build(0.0, lin, self.A, shift, counts + beta * widths)


def _vec(ctx, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (ctx.n,):
        raise ValueError(f"expected {ctx.n} coefficients, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("coefficients must be finite")
    return x


def nll(ctx: LikelihoodContext, x, which: str | None = None) -> float:
    """Negative log-likelihood of kind ``which`` (default: the context's own kind)."""
    return ctx.terms(which).value(_vec(ctx, x))


def nll_arrival(ctx: LikelihoodContext, x) -> float:
    """``b.x - sum_m log(g(tau_m) + (Ax)_m)``, without the constant ``int g``."""
    return nll(ctx, x, "arrival")


def nll_counting(ctx: LikelihoodContext, x) -> float:
    """``1'Ax - y'log(g + Ax)``; empty bins contribute only the linear term."""
    return nll(ctx, x, "counting")


def nll_augmented(ctx: LikelihoodContext, x) -> float:
    """Likelihood of the data merged with homogeneous events of rate ``beta``."""
    return nll(ctx, x, "augmented")


def nll_det_regularized(ctx: LikelihoodContext, x) -> float:
    """Likelihood with the augmentation term replaced by its expectation."""
    return nll(ctx, x, "det")


def gradient(ctx: LikelihoodContext, x, which: str | None = None) -> np.ndarray:
    return ctx.terms(which).gradient(_vec(ctx, x))


def hessian(ctx: LikelihoodContext, x, which: str | None = None) -> np.ndarray:
    return ctx.terms(which).hessian(_vec(ctx, x))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeasibilityReport:
    min_intensity: float
    max_intensity: float
    feasible: bool
    argmin: float
    argmax: float
    r_max: float | None = None
    within_box: bool | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def feasibility_margin(basis: BasisSpec, x, r_max: float | None = None,
                       grid_size: int = CHECK_GRID_SIZE) -> FeasibilityReport:
    """Extremes of ``R_x`` over the domain (grid search plus local refinement)."""
    x = np.asarray(x, dtype=float)
    pts = basis.check_points(grid_size)
    vals = basis.intensity(x, pts)
    i_min, i_max = int(np.argmin(vals)), int(np.argmax(vals))
    t_min, v_min = float(pts[i_min]), float(vals[i_min])
    t_max, v_max = float(pts[i_max]), float(vals[i_max])
    if not basis.piecewise_constant and pts.size >= 3:
        def r(t):
            return float(basis.intensity(x, np.atleast_1d(t))[0])

        t, v = refine_extremum(r, pts[max(i_min - 1, 0)], pts[min(i_min + 1, pts.size - 1)])
        if v < v_min:
            t_min, v_min = t, v
        t, v = refine_extremum(r, pts[max(i_max - 1, 0)], pts[min(i_max + 1, pts.size - 1)], maximize=True)
        if v > v_max:
            t_max, v_max = t, v
    box = None if r_max is None else bool(v_max <= r_max + FEASIBILITY_TOL)
    return FeasibilityReport(v_min, v_max, bool(v_min >= -FEASIBILITY_TOL), t_min, t_max,
                             None if r_max is None else float(r_max), box)
