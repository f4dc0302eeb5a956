"""Domain, offset and basis functions of a linearly parameterized intensity.

The intensity model is ``R_x(t) = g(t) + x . gamma(t)`` on a 1-D interval.
Everything downstream (likelihoods, bounds, sampling) consumes a
:class:`BasisSpec`, whose Gram matrix and sup-norm are computed here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import ClassVar, Sequence

import numpy as np

from .errors import CapacityError, DomainError, QuadratureError
from .quadrature import DEFAULT_TOL, MAX_INTERVALS, adaptive_simpson, refine_extremum

SUP_GRID_SIZE = 4096
MIN_PANELS = 64
MAX_RIP_N = 20


@dataclass(frozen=True)
class Domain:
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            raise DomainError(f"invalid domain [{self.lower}, {self.upper}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def volume(self) -> float:
        return self.upper - self.lower

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.lower) & (t <= self.upper)


# ---------------------------------------------------------------------------
# Function families
# ---------------------------------------------------------------------------


class FunctionSpec:
    """Base class for the evaluable function families.

    Subclasses are frozen dataclasses; ``breakpoints`` lists points where the
    function (or its derivative) is discontinuous, and ``hints`` lists extra
    panel boundaries that help quadrature resolve narrow features.
    """

    kind: ClassVar[str]

    def __call__(self, t):
        raise NotImplementedError

    def breakpoints(self) -> tuple:
        return ()

    def hints(self) -> tuple:
        return ()

    @property
    def piecewise_constant(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(FunctionSpec):
    value: float = 1.0
    kind: ClassVar[str] = "constant"

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value))

    @property
    def piecewise_constant(self):
        return True

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class Indicator(FunctionSpec):
    """``value`` on the half-open interval ``[lower, upper)``, zero elsewhere."""

    lower: float
    upper: float
    value: float = 1.0
    kind: ClassVar[str] = "indicator"

    def __post_init__(self):
        if not self.upper > self.lower:
            raise DomainError("indicator needs upper > lower")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lower) & (t < self.upper), float(self.value), 0.0)

    def breakpoints(self):
        return (float(self.lower), float(self.upper))

    @property
    def piecewise_constant(self):
        return True

    def to_dict(self):
        return {"kind": self.kind, "lower": self.lower, "upper": self.upper, "value": self.value}


@dataclass(frozen=True)
class Gaussian(FunctionSpec):
    """``amplitude * exp(-(t - center)^2 / (2 width^2))``; ``width`` is the standard deviation."""

    center: float
    width: float
    amplitude: float = 1.0
    kind: ClassVar[str] = "gaussian"

    def __post_init__(self):
        if not self.width > 0:
            raise DomainError("gaussian width must be positive")

    def __call__(self, t):
        z = (np.asarray(t, dtype=float) - self.center) / self.width
        return self.amplitude * np.exp(-0.5 * z * z)

    def hints(self):
        return tuple(self.center + k * self.width for k in (-6, -3, -1.5, 0, 1.5, 3, 6))

    def to_dict(self):
        return {"kind": self.kind, "center": self.center, "width": self.width,
                "amplitude": self.amplitude}


def _as_knots(knots, values):
    k = tuple(float(v) for v in knots)
    v = tuple(float(v) for v in values)
    if len(k) < 2 or len(k) != len(v):
        raise DomainError("need at least two knots and one value per knot")
    if any(b <= a for a, b in zip(k, k[1:])):
        raise DomainError("knots must be strictly increasing")
    if not all(math.isfinite(x) for x in k + v):
        raise DomainError("knots and values must be finite")
    return k, v


@dataclass(frozen=True)
class GridSampled(FunctionSpec):
    """Linear interpolation of tabulated values; zero outside the knot range."""

    knots: tuple
    values: tuple
    kind: ClassVar[str] = "grid_sampled"

    def __post_init__(self):
        k, v = _as_knots(self.knots, self.values)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.knots, self.values, left=0.0, right=0.0)

    def breakpoints(self):
        return self.knots

    def to_dict(self):
        return {"kind": self.kind, "knots": list(self.knots), "values": list(self.values)}


@dataclass(frozen=True)
class ShiftedKernel(FunctionSpec):
    """A tabulated kernel ``k(u)`` evaluated at ``u = t - shift``."""

    knots: tuple
    values: tuple
    shift: float = 0.0
    kind: ClassVar[str] = "shifted_kernel"

    def __post_init__(self):
        k, v = _as_knots(self.knots, self.values)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        u = np.asarray(t, dtype=float) - self.shift
        return np.interp(u, self.knots, self.values, left=0.0, right=0.0)

    def breakpoints(self):
        return tuple(k + self.shift for k in self.knots)

    def to_dict(self):
        return {"kind": self.kind, "knots": list(self.knots), "values": list(self.values),
                "shift": self.shift}


_KINDS = {cls.kind: cls for cls in (Constant, Indicator, Gaussian, GridSampled, ShiftedKernel)}


def function_from_dict(data: dict) -> FunctionSpec:
    """Build a function from its ``{"kind": ..., ...}`` JSON form."""
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError("function spec must be an object with a 'kind' field")
    params = dict(data)
    kind = params.pop("kind")
    if kind == "shifted_kernel" and "kernel" in params:
        kernel = params.pop("kernel")
        params["knots"], params["values"] = kernel["knots"], kernel["values"]
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown function kind {kind!r}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind!r}: {exc}") from None


# ---------------------------------------------------------------------------
# Basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisSpec:
    domain: Domain
    offset: FunctionSpec
    elements: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if not self.elements:
            raise DomainError("a basis needs at least one element")

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def piecewise_constant(self) -> bool:
        return self.offset.piecewise_constant and all(e.piecewise_constant for e in self.elements)

    def evaluate(self, t) -> np.ndarray:
        """Unchecked evaluation: ``(P,)`` points -> ``(P, N)`` matrix."""
        t = np.asarray(t, dtype=float).ravel()
        out = np.empty((t.size, self.n))
        for j, e in enumerate(self.elements):
            out[:, j] = e(t)
        return out

    def offset_at(self, t) -> np.ndarray:
        return np.asarray(self.offset(np.asarray(t, dtype=float).ravel()), dtype=float)

    def intensity(self, x, t) -> np.ndarray:
        """Unchecked ``g(t) + x . gamma(t)`` for an array of points."""
        return self.offset_at(t) + self.evaluate(t) @ np.asarray(x, dtype=float)

    def breakpoints(self) -> np.ndarray:
        pts = set(self.offset.breakpoints())
        for e in self.elements:
            pts.update(e.breakpoints())
        return self._inside(pts)

    def panel_edges(self, min_panels=MIN_PANELS) -> np.ndarray:
        pts = set(np.linspace(self.domain.lower, self.domain.upper, min_panels + 1))
        pts.update(self.breakpoints())
        for f in (self.offset, *self.elements):
            pts.update(f.hints())
        pts.update((self.domain.lower, self.domain.upper))
        return self._inside(pts, closed=True)

    def check_points(self, size=SUP_GRID_SIZE) -> np.ndarray:
        """Points where intensity extrema are searched.

        Piecewise-constant models are exact at cell midpoints; otherwise a
        uniform grid is merged with every breakpoint (and the point just left
        of each, to catch the limit of half-open indicators).
        """
        lo, hi = self.domain.lower, self.domain.upper
        cells = np.unique(np.concatenate([[lo, hi], self.breakpoints()]))
        if self.piecewise_constant:
            return 0.5 * (cells[:-1] + cells[1:])
        bp = self.breakpoints()
        left = np.nextafter(bp, -np.inf)
        pts = np.concatenate([np.linspace(lo, hi, size), bp, left])
        return np.unique(pts[(pts >= lo) & (pts <= hi)])

    def _inside(self, pts, closed=False):
        lo, hi = self.domain.lower, self.domain.upper
        arr = np.array(sorted(float(p) for p in pts), dtype=float)
        if closed:
            return arr[(arr >= lo) & (arr <= hi)]
        return arr[(arr > lo) & (arr < hi)]

    def to_dict(self) -> dict:
        return {
            "domain": {"lower": self.domain.lower, "upper": self.domain.upper},
            "offset": self.offset.to_dict(),
            "elements": [e.to_dict() for e in self.elements],
        }


def basis_from_dict(data: dict) -> BasisSpec:
    """Parse the model JSON object ``{"domain", "offset", "elements"}``."""
    if not isinstance(data, dict):
        raise ValueError("model must be a JSON object")
    missing = {"domain", "elements"} - data.keys()
    if missing:
        raise ValueError(f"model is missing field(s): {', '.join(sorted(missing))}")
    dom = data["domain"]
    try:
        domain = Domain(float(dom["lower"]), float(dom["upper"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad domain: {exc}") from None
    offset = function_from_dict(data.get("offset", {"kind": "constant", "value": 0.0}))
    elements = data["elements"]
    if not isinstance(elements, list):
        raise ValueError("'elements' must be a list")
    return BasisSpec(domain, offset, tuple(function_from_dict(e) for e in elements))


def indicator_basis(n: int, offset: float = 0.0) -> BasisSpec:
    """Disjoint unit indicators ``[k, k+1)`` on ``[0, n]``."""
    return BasisSpec(Domain(0.0, float(n)), Constant(offset),
                     tuple(Indicator(float(k), float(k + 1)) for k in range(n)))


def gaussian_basis(n: int, width: float, lower: float = 0.0, upper: float = 1.0,
                   amplitude: float = 1.0, offset: float = 0.0) -> BasisSpec:
    """``n`` Gaussians centred at the midpoints of ``n`` equal cells."""
    h = (upper - lower) / n
    centers = lower + h * (np.arange(n) + 0.5)
    return BasisSpec(Domain(lower, upper), Constant(offset),
                     tuple(Gaussian(float(c), float(width), float(amplitude)) for c in centers))


# ---------------------------------------------------------------------------
# Pointwise evaluation
# ---------------------------------------------------------------------------


def _checked_points(basis, t):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or not np.all(basis.domain.contains(arr)):
        raise DomainError(f"coordinate outside domain [{basis.domain.lower}, {basis.domain.upper}]")
    return arr


def eval_basis(basis: BasisSpec, t):
    """Basis vector ``gamma(t)``; a scalar ``t`` gives shape ``(N,)``, an array ``(P, N)``."""
    arr = _checked_points(basis, t)
    out = basis.evaluate(arr)
    return out[0] if arr.ndim == 0 else out


def eval_intensity(basis: BasisSpec, x, t):
    """``g(t) + x . gamma(t)``; not clipped, so infeasible ``x`` may give negatives."""
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.n,):
        raise ValueError(f"expected {basis.n} coefficients, got shape {x.shape}")
    arr = _checked_points(basis, t)
    out = basis.intensity(x, arr)
    return float(out[0]) if arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Integrals and the Gram summary
# ---------------------------------------------------------------------------


def _integrate(basis, integrand, edges, tol):
    """Per-panel integrals; piecewise-constant models are integrated exactly."""
    if basis.piecewise_constant:
        cells = np.unique(np.concatenate([edges, basis.breakpoints()]))
        cells = cells[(cells >= edges[0]) & (cells <= edges[-1])]
        mids = 0.5 * (cells[:-1] + cells[1:])
        vals = integrand(mids) * np.diff(cells)[:, None]
        which = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, len(edges) - 2)
        out = np.zeros((len(edges) - 1, vals.shape[1]))
        np.add.at(out, which, vals)
        return out, 0.0
    return adaptive_simpson(integrand, edges, tol=tol, max_intervals=MAX_INTERVALS)


@lru_cache(maxsize=64)
def _panel_integrals(basis, tol):
    """Integrals of g and every gamma_n over the whole domain."""
    edges = basis.panel_edges(min_panels=1 if basis.piecewise_constant else MIN_PANELS)

    def integrand(t):
        return np.column_stack([basis.offset_at(t), basis.evaluate(t)])

    vals, err = _integrate(basis, integrand, edges, tol)
    total = vals.sum(axis=0)
    return float(total[0]), total[1:], err


def offset_integral(basis: BasisSpec, tol=DEFAULT_TOL) -> float:
    return _panel_integrals(basis, tol)[0]


def element_integrals(basis: BasisSpec, tol=DEFAULT_TOL) -> np.ndarray:
    """The vector ``b_n = int gamma_n``."""
    return _panel_integrals(basis, tol)[1].copy()


def bin_integrals(basis: BasisSpec, edges, tol=DEFAULT_TOL):
    """Per-bin integrals of ``g`` and of each ``gamma_n``.

    Returns ``(g_m, gamma_m)`` with shapes ``(M0,)`` and ``(M0, N)``.
    """
    edges = np.asarray(edges, dtype=float)
    g_m, rows = _bin_integrals_cached(basis, tuple(edges.tolist()), tol)
    return g_m.copy(), rows.copy()


@lru_cache(maxsize=32)
def _bin_integrals_cached(basis, edges, tol):
    edges = np.asarray(edges)
    panels = np.unique(np.concatenate([edges, basis.panel_edges()]))
    panels = panels[(panels >= edges[0]) & (panels <= edges[-1])]

    def integrand(t):
        return np.column_stack([basis.offset_at(t), basis.evaluate(t)])

    vals, _ = _integrate(basis, integrand, panels, tol)
    mids = 0.5 * (panels[:-1] + panels[1:])
    which = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, edges.size - 2)
    out = np.zeros((edges.size - 1, vals.shape[1]))
    np.add.at(out, which, vals)
    return out[:, 0], out[:, 1:]


@lru_cache(maxsize=64)
def _gram_full(basis, tol):
    n = basis.n
    iu = np.triu_indices(n)

    def integrand(t):
        v = basis.evaluate(t)
        return v[:, iu[0]] * v[:, iu[1]]

    edges = basis.panel_edges(min_panels=1 if basis.piecewise_constant else MIN_PANELS)
    vals, err = _integrate(basis, integrand, edges, tol)
    gram = np.zeros((n, n))
    gram[iu] = vals.sum(axis=0)
    gram = gram + np.triu(gram, 1).T
    gram.setflags(write=False)
    return gram, err


def gram_matrix(basis: BasisSpec, tol=DEFAULT_TOL) -> np.ndarray:
    """Full Gram matrix ``Gamma_ij = int gamma_i gamma_j``."""
    return _gram_full(basis, tol)[0].copy()


def _support(basis, support):
    if support is None:
        return tuple(range(basis.n))
    s = tuple(sorted({int(i) for i in support}))
    if not s or s[0] < 0 or s[-1] >= basis.n:
        raise DomainError(f"support must be a non-empty subset of 0..{basis.n - 1}")
    return s


def sup_norm_2inf(basis: BasisSpec, support=None, grid_size=SUP_GRID_SIZE) -> float:
    """``sup_t ||gamma_S(t)||_2`` by grid search plus local refinement."""
    s = list(_support(basis, support))
    pts = basis.check_points(grid_size)

    def norm(t):
        return float(np.linalg.norm(basis.evaluate(np.atleast_1d(t))[0, s]))

    norms = np.linalg.norm(basis.evaluate(pts)[:, s], axis=1)
    i = int(np.argmax(norms))
    best = float(norms[i])
    if basis.piecewise_constant or pts.size < 3:
        return best
    lo = pts[max(i - 1, 0)]
    hi = pts[min(i + 1, pts.size - 1)]
    _, val = refine_extremum(norm, lo, hi, maximize=True)
    return max(best, val)


@dataclass(frozen=True, eq=False)
class GramSummary:
    """Gram matrix of ``gamma_S`` and the scalars the error bounds consume."""

    gram: np.ndarray
    trace: float
    sigma_min: float
    sup_norm_2inf: float
    quadrature_error_estimate: float
    support: tuple
    volume: float
    n_basis: int

    @property
    def size(self) -> int:
        return len(self.support)

    @property
    def full_support(self) -> bool:
        return self.size == self.n_basis

    def to_dict(self) -> dict:
        return {
            "gram": self.gram.tolist(),
            "trace": self.trace,
            "sigma_min": self.sigma_min,
            "sup_norm_2inf": self.sup_norm_2inf,
            "quadrature_error_estimate": self.quadrature_error_estimate,
            "support": list(self.support),
            "volume": self.volume,
            "n_basis": self.n_basis,
        }


def gram_summary(basis: BasisSpec, support: Sequence[int] | None = None,
                 tol=DEFAULT_TOL, grid_size=SUP_GRID_SIZE) -> GramSummary:
    """Gram submatrix, trace, minimum eigenvalue and sup-norm for support ``S``.

    Indices are 0-based. ``support=None`` means the full basis.
    """
    s = _support(basis, support)
    full, err = _gram_full(basis, tol)
    gram = full[np.ix_(s, s)].copy()
    eig = np.linalg.eigvalsh(gram)
    trace = float(np.trace(gram))
    if eig[0] < -1e-8 * max(trace, np.finfo(float).tiny):
        raise QuadratureError(f"Gram matrix is not PSD (min eigenvalue {eig[0]:.3e})", err)
    return GramSummary(
        gram=gram,
        trace=trace,
        sigma_min=float(eig[0]),
        sup_norm_2inf=sup_norm_2inf(basis, s, grid_size),
        quadrature_error_estimate=float(err),
        support=s,
        volume=basis.domain.volume,
        n_basis=basis.n,
    )


def rip_constant(basis_or_gram, s: int) -> float:
    """Exact restricted isometry constant ``delta_s`` by enumerating all supports.

    Accepts a :class:`BasisSpec` or a precomputed Gram matrix.
    """
    gram = gram_matrix(basis_or_gram) if isinstance(basis_or_gram, BasisSpec) \
        else np.asarray(basis_or_gram, dtype=float)
    n = gram.shape[0]
    if n > MAX_RIP_N:
        raise CapacityError(f"RIP enumeration limited to N <= {MAX_RIP_N} (got {n})")
    if not 1 <= s <= n:
        raise DomainError(f"sparsity must be in 1..{n}")
    supports = np.array(list(itertools.combinations(range(n), s)))
    subs = gram[supports[:, :, None], supports[:, None, :]]
    eig = np.linalg.eigvalsh(subs)
    delta = np.maximum(eig[:, -1] - 1.0, 1.0 - eig[:, 0]).max()
    return max(float(delta), 0.0)
