"""Error bounds, their preconditions, and Monte-Carlo Fisher information.

All bounds share the shape ``c * (geometry) * (intensity scaling)`` with a
failure probability ``(2k+1) exp(-zeta)``. The constant ``c`` defaults to
``c_alpha_s(alpha, s)`` where ``alpha = r_min * sigma / (zeta * ||gamma_S||^2)``
is the slack in the precondition; the precondition itself is ``alpha > 2``.
When it fails, a nominal ``alpha = 3`` is used so a (non-guaranteed) number
can still be reported.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, GramSummary, element_integrals
from .errors import DomainError, FeasibilityError, RankDeficiencyError
from .mcstats import exact_mean, run_trials, standard_error
from .process import EventSet, RngSeed, sample_arrivals

NOMINAL_ALPHA = 3.0
EIG_FLOOR = 1e-12


def c_alpha_s(alpha: float, s: int) -> float:
    """``(10/3) * (2 / (3 sqrt(alpha s)) + sqrt 2) / (1 - sqrt(2 / alpha))``; needs ``alpha > 2``."""
    if not alpha > 2:
        raise DomainError("alpha must exceed 2")
    if s < 1:
        raise DomainError("s must be at least 1")
    if math.isinf(alpha):
        return 10.0 / 3.0 * math.sqrt(2.0)
    return 10.0 / 3.0 * (2.0 / (3.0 * math.sqrt(alpha * s)) + math.sqrt(2.0)) / (1.0 - math.sqrt(2.0 / alpha))


@dataclass(frozen=True)
class BoundReport:
    kind: str
    zeta: float
    c_value: float
    alpha: float
    s: int
    bound: float
    probability: float
    precondition_ok: bool
    precondition_detail: str
    nontrivial: bool = field(default=False)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _probability(k, zeta):
    return 1.0 - (2 * k + 1) * math.exp(-zeta)


def _report(kind, zeta, k, s, slack_alpha, geometry, c, detail):
    """Assemble a report; ``slack_alpha`` is the precondition ratio (ok iff > 2)."""
    ok = bool(slack_alpha > 2)
    status = "holds" if ok else "fails"
    detail = f"{detail}; alpha = {slack_alpha:.6g} ({status}, need > 2)"
    alpha = slack_alpha
    if c is None:
        if not ok:
            alpha = NOMINAL_ALPHA
            detail += f"; c evaluated at nominal alpha = {NOMINAL_ALPHA:g}"
        c = c_alpha_s(alpha, s)
    prob = _probability(k, zeta)
    return BoundReport(kind, float(zeta), float(c), float(alpha), int(s), float(c * geometry), prob,
                       ok, detail, bool(zeta > math.log(2 * k + 1)))


def _check_rates(r_min, r_max, zeta):
    if not zeta > 0:
        raise DomainError("zeta must be positive")
    if not (r_max >= r_min > 0):
        raise DomainError("need r_max >= r_min > 0")


def theorem_bound(summary: GramSummary, r_min: float, r_max: float, zeta: float,
                  support=None, c: float | None = None) -> BoundReport:
    """``c sqrt(zeta Tr(Gamma_S)) / sigma(Gamma_S) * r_max / sqrt(r_min)``.

    ``summary`` must describe the support ``S`` (see ``gram_summary``); if
    ``support`` is given it has to agree. Probability uses ``k = |S|``.
    """
    _check_rates(r_min, r_max, zeta)
    if support is not None and tuple(sorted(support)) != tuple(summary.support):
        raise ValueError("summary was computed for a different support")
    sigma, sup2 = summary.sigma_min, summary.sup_norm_2inf ** 2
    k = summary.size
    kind = "theorem1" if summary.full_support else "theorem2"
    geometry = math.sqrt(zeta * summary.trace) / sigma * r_max / math.sqrt(r_min) if sigma > 0 else math.inf
    slack = r_min * sigma / (zeta * sup2) if sup2 > 0 else math.inf
    detail = f"r_min = {r_min:.6g} vs 2*zeta*||gamma_S||^2/sigma = {2 * zeta * sup2 / sigma if sigma > 0 else math.inf:.6g}"
    return _report(kind, zeta, k, k, slack, geometry, c, detail)


def rip_bound(delta_s: float, s: int, r_min: float, r_max: float, zeta: float,
              sup_norm: float | None = None, c: float | None = None) -> BoundReport:
    """``c sqrt(zeta s (1 + delta_s)) / (1 - delta_s) * r_max / sqrt(r_min)``.

    The precondition needs ``sup_norm`` (``||gamma_S||_{2,inf}``); without it the
    precondition is reported as not established.
    """
    _check_rates(r_min, r_max, zeta)
    if not 0 <= delta_s < 1:
        raise DomainError("delta_s must lie in [0, 1)")
    if s < 1:
        raise DomainError("s must be at least 1")
    sigma = 1.0 - delta_s
    geometry = math.sqrt(zeta * s * (1.0 + delta_s)) / sigma * r_max / math.sqrt(r_min)
    if sup_norm is None:
        slack, detail = 0.0, "sup norm not supplied, precondition not established"
    else:
        slack = r_min * sigma / (zeta * sup_norm**2) if sup_norm > 0 else math.inf
        detail = f"r_min = {r_min:.6g} vs 2*zeta*||gamma_S||^2/(1-delta_s) = {2 * zeta * sup_norm**2 / sigma:.6g}"
    return _report("rip_form", zeta, s, s, slack, geometry, c, detail)


def design_norms(A) -> tuple[float, float, float]:
    """``(||A||_F, smallest singular value, max row 2-norm)``."""
    A = np.asarray(A, dtype=float)
    sv = np.linalg.svd(A, compute_uv=False)
    smallest = float(sv[-1]) if A.shape[0] >= A.shape[1] else 0.0
    return float(np.linalg.norm(A)), smallest, float(np.linalg.norm(A, axis=1).max())


def counting_bound(A, r_min: float, r_max: float, zeta: float, c: float | None = None) -> BoundReport:
    """``c sqrt(zeta) ||A||_F / sigma(A)^2 * r_max / sqrt(r_min)`` for the counting model."""
    _check_rates(r_min, r_max, zeta)
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or not np.any(A):
        raise DomainError("A must be a nonzero matrix")
    fro, sigma, row = design_norms(A)
    if sigma <= 1e-14 * fro:
        raise RankDeficiencyError("design matrix has deficient column rank")
    sigma2 = sigma**2
    geometry = math.sqrt(zeta) * fro / sigma2 * r_max / math.sqrt(r_min)
    slack = r_min * sigma2 / (zeta * row**2)
    detail = f"r_min = {r_min:.6g} vs 2*zeta*||A||_2inf^2/sigma(A)^2 = {2 * zeta * row**2 / sigma2:.6g}"
    n = A.shape[1]
    return _report("corollary_counting", zeta, n, n, slack, geometry, c, detail)


def noised_bound(summary: GramSummary, r_max: float, zeta: float, c: float | None = None) -> BoundReport:
    """``2c sqrt(zeta Tr(Gamma)) / sigma(Gamma) * sqrt(r_max)`` after noise augmentation at rate ``r_max``."""
    _check_rates(r_max, r_max, zeta)
    rep = theorem_bound(summary, r_max, r_max, zeta, c=c)
    detail = rep.precondition_detail.replace("r_min", "r_max", 1)
    return BoundReport("corollary_noised", rep.zeta, rep.c_value, rep.alpha, rep.s, 2.0 * rep.bound,
                       rep.probability, rep.precondition_ok, detail, rep.nontrivial)


@dataclass(frozen=True)
class SampleComplexityReport:
    zeta_min: float
    ratio: float
    chain_lower: float
    chain_ok: bool
    necessary_events_lb: float
    satisfied: bool
    mbar_lower: float
    mbar_upper: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sample_complexity_check(summary: GramSummary, r_min: float, r_max: float, s: int) -> SampleComplexityReport:
    """Necessary event budget for the precondition at the smallest useful ``zeta``.

    With ``zeta_min = log(2s+1)`` the precondition implies
    ``|T| r_min > 2 zeta_min s`` because ``||gamma_S||^2 / sigma >= s / |T|``.
    """
    if s < 1:
        raise DomainError("s must be at least 1")
    zeta_min = math.log(2 * s + 1)
    vol = summary.volume
    ratio = summary.sup_norm_2inf**2 / summary.sigma_min if summary.sigma_min > 0 else math.inf
    lower = s / vol
    lb = 2.0 * zeta_min * s
    return SampleComplexityReport(zeta_min, ratio, lower, bool(ratio >= lower * (1 - 1e-9)), lb,
                                  bool(vol * r_min > lb), vol * r_min, vol * r_max)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------


@dataclass
class FisherEstimate:
    fisher: np.ndarray
    trials: int
    crlb_trace: float
    gamma_check: np.ndarray
    fisher_se: np.ndarray
    gamma_check_se: np.ndarray
    crlb_trace_se: float
    singular: bool = False

    def to_dict(self) -> dict:
        return {
            "fisher": self.fisher.tolist(),
            "trials": self.trials,
            "crlb_trace": self.crlb_trace,
            "crlb_trace_se": self.crlb_trace_se,
            "gamma_check": self.gamma_check.tolist(),
            "fisher_se": self.fisher_se.tolist(),
            "gamma_check_se": self.gamma_check_se.tolist(),
            "singular": self.singular,
        }


def _seed(rng) -> RngSeed:
    if isinstance(rng, RngSeed):
        return rng
    if isinstance(rng, np.random.Generator):
        return RngSeed(int(rng.integers(0, 2**63)))
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng))
    raise TypeError("rng must be an RngSeed, numpy Generator or integer seed")


def _inverse_trace(mat):
    """``Tr(mat^-1)`` and ``mat^-1`` with an eigenvalue floor; pseudo-inverse below it."""
    sym = 0.5 * (mat + mat.T)
    lam, vec = np.linalg.eigh(sym)
    floor = EIG_FLOOR * max(lam[-1], 0.0)
    keep = lam > floor
    singular = not np.all(keep)
    inv = (vec[:, keep] / lam[keep]) @ vec[:, keep].T
    return float(np.sum(1.0 / lam[keep])), inv, singular


def _fisher_trial(job):
    basis, x_bar, seed = job
    ev = sample_arrivals(basis, x_bar, rng=seed)
    A = basis.evaluate(ev.coordinates)
    r = basis.offset_at(ev.coordinates) + A @ x_bar
    Ad = A / r[:, None]
    return Ad.T @ Ad, Ad.T @ A


def fisher_mc(basis: BasisSpec, x_bar, trials: int, rng, jobs: int = 1) -> FisherEstimate:
    """Monte-Carlo estimate of ``E(A' D^2 A)`` and of ``E(A' D A)`` (which equals Gamma).

    Trial ``i`` draws its events from the stream ``rng.derive("fisher", i)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    x_bar = np.asarray(x_bar, dtype=float)
    seed = _seed(rng)
    jobs_ = [(basis, x_bar, seed.derive("fisher", i)) for i in range(trials)]
    out = run_trials(_fisher_trial, jobs_, jobs)
    fis = np.array([o[0] for o in out])
    gam = np.array([o[1] for o in out])
    fisher = exact_mean(fis)
    trace, inv, singular = _inverse_trace(fisher)
    if singular:
        warnings.warn("Fisher estimate is numerically singular; reporting pseudo-inverse trace",
                      RuntimeWarning, stacklevel=2)
    # Delta method: d Tr(F^-1) = -Tr(F^-2 dF).
    lin = np.einsum("ij,tji->t", inv @ inv, fis)
    trace_se = float(standard_error(lin[:, None])[0])
    return FisherEstimate(fisher, trials, trace, exact_mean(gam), standard_error(fis),
                          standard_error(gam), trace_se, singular)


# ---------------------------------------------------------------------------
# Concentration lemmas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LemmaQuantities:
    l1_quantity: float
    l2_quantity: float
    events: int
    residual: np.ndarray


def lemma_quantities(basis: BasisSpec, x_bar, events: EventSet, support=None) -> LemmaQuantities:
    """``||b_S - A_S' D 1||_2`` and ``sigma(A_S' D A_S)`` for one realization.

    ``D = diag(1 / R_xbar(tau))``; an event where the intensity vanishes
    raises :class:`FeasibilityError`.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    cols = list(range(basis.n)) if support is None else sorted(int(i) for i in support)
    A = basis.evaluate(events.coordinates)
    r = basis.offset_at(events.coordinates) + A @ x_bar
    if r.size and not np.all(r > 0):
        i = int(np.argmin(r))
        raise FeasibilityError("intensity vanishes at an event", float(events.coordinates[i]), float(r[i]))
    As = A[:, cols]
    b = element_integrals(basis)[cols]
    resid = b - As.T @ (1.0 / r)
    l1 = float(np.linalg.norm(resid))
    G = (As / r[:, None]).T @ As
    l2 = float(np.linalg.eigvalsh(0.5 * (G + G.T))[0])
    return LemmaQuantities(l1, l2, events.count, resid)


def lemma1_bound(zeta: float, summary: GramSummary, r_min: float, m: int, m_bar: float) -> float:
    """``(2/3) zeta ||gamma_S|| / r_min + sqrt(2 zeta (M / Mbar) Tr(Gamma_S) / r_min)``."""
    return (2.0 / 3.0 * zeta * summary.sup_norm_2inf / r_min
            + math.sqrt(2.0 * zeta * (m / m_bar) * summary.trace / r_min))


def lemma2_bound(zeta: float, summary: GramSummary, r_min: float) -> float:
    """``sigma(Gamma_S) (1 - sqrt(2 zeta ||gamma_S||^2 / (r_min sigma(Gamma_S))))``."""
    sigma = summary.sigma_min
    return sigma * (1.0 - math.sqrt(2.0 * zeta * summary.sup_norm_2inf**2 / (r_min * sigma)))


def inverse_trace_ordering(gram) -> tuple[float, float]:
    """``(Tr(Gamma^-1), Tr(Gamma) / sigma(Gamma)^2)``; the first never exceeds the second."""
    gram = np.asarray(gram, dtype=float)
    lam = np.linalg.eigvalsh(gram)
    return float(np.sum(1.0 / lam)), float(np.sum(lam) / lam[0] ** 2)


def intensity_range(basis: BasisSpec, x) -> tuple[float, float]:
    """``(inf R_x, sup R_x)`` over the domain."""
    from .likelihood import feasibility_margin

    rep = feasibility_margin(basis, x)
    return rep.min_intensity, rep.max_intensity

