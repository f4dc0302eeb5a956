"""Monte-Carlo studies: regularization comparison, bound tightness, lemma concentration.

Every trial draws from its own stream ``master.derive(<study>, trial, ...)``,
so results are independent of execution order and of ``jobs``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import BasisSpec, element_integrals, gaussian_basis, gram_summary, offset_integral
from .bounds import (BoundReport, intensity_range, lemma1_bound, lemma2_bound, lemma_quantities,
                     theorem_bound)
from .errors import InitializationError, StudyError
from .likelihood import LikelihoodContext, Regularizer, feasibility_margin
from .mcstats import exact_mean, run_trials, standard_error
from .process import RngSeed, discretize, expected_count, sample_arrivals, sample_homogeneous
from .solver import ConstraintSet, SolveOptions, estimate_mle

SCHEMES = ("none", "noise", "det")
MAX_FAILURE_RATE = 0.01
CSV_HEADER = ("scheme", "beta_ratio", "q10", "median", "q90", "abs_q10", "abs_median", "abs_q90", "trials")


@dataclass(frozen=True)
class RegStudyConfig:
    """Regularization study settings.

    ``fwhm`` is the full width at half maximum of each Gaussian element;
    ``None`` means ``1.5 / n_basis`` (one and a half center spacings).
    ``beta_grid`` holds ratios ``beta / R_max`` where ``R_max`` is the largest
    true intensity in each trial.
    """

    n_basis: int = 50
    m0: int = 500
    expected_events: float = 100.0
    beta_grid: tuple = (0.0, 0.1, 0.3, 1.0, 3.0, 10.0)
    trials: int = 200
    coefficient_law: str = "exponential"
    master_seed: int = 0
    schemes: tuple = SCHEMES
    fwhm: float | None = None
    lower: float = 0.0
    upper: float = 1.0
    max_iters: int = 50_000
    tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if self.n_basis < 1 or self.m0 < 1:
            raise ValueError("n_basis and m0 must be positive")
        if not self.expected_events > 0:
            raise ValueError("expected_events must be positive")
        if not self.beta_grid or any(not b >= 0 for b in self.beta_grid):
            raise ValueError("beta_grid values must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.coefficient_law != "exponential":
            raise ValueError("only the exponential coefficient law is supported")
        bad = set(self.schemes) - set(SCHEMES)
        if bad or not self.schemes:
            raise ValueError(f"schemes must be a non-empty subset of {SCHEMES}")
        if self.fwhm is not None and not self.fwhm > 0:
            raise ValueError("fwhm must be positive")

    @property
    def basis_std(self) -> float:
        fwhm = self.fwhm if self.fwhm is not None else 1.5 * (self.upper - self.lower) / self.n_basis
        return fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))

    def basis(self) -> BasisSpec:
        return gaussian_basis(self.n_basis, self.basis_std, self.lower, self.upper)

    @classmethod
    def from_dict(cls, data: dict) -> "RegStudyConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RegStudyConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_grid"] = list(self.beta_grid)
        d["schemes"] = list(self.schemes)
        return d


@dataclass(frozen=True)
class QuantileRow:
    scheme: str
    beta_ratio: float
    q10: float
    median: float
    q90: float
    abs_q10: float
    abs_median: float
    abs_q90: float
    trials: int


@dataclass
class QuantileTable:
    rows: list
    relative: dict = field(default_factory=dict)
    absolute: dict = field(default_factory=dict)
    solves: int = 0
    failures: int = 0

    def row(self, scheme: str, beta_ratio: float) -> QuantileRow:
        for r in self.rows:
            if r.scheme == scheme and r.beta_ratio == beta_ratio:
                return r
        raise KeyError((scheme, beta_ratio))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.scheme, repr(r.beta_ratio)] + [repr(float(getattr(r, k))) for k in CSV_HEADER[2:8]]
                       + [r.trials])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _quantiles(values):
    return tuple(float(q) for q in np.quantile(values, [0.1, 0.5, 0.9]))


def _solve(ctx, options, init):
    try:
        return estimate_mle(ctx, options=options, init=init)
    except InitializationError:
        return estimate_mle(ctx, options=options)


def _reg_trial(job):
    config, index = job
    basis = config.basis()
    seed = RngSeed(config.master_seed).derive("reg", index)
    b = element_integrals(basis)
    x_bar = seed.derive("coeffs").generator().exponential(size=basis.n)
    x_bar *= (config.expected_events - offset_integral(basis)) / float(b @ x_bar)
    r_max = feasibility_margin(basis, x_bar).max_intensity
    events = sample_arrivals(basis, x_bar, rng=seed.derive("events"))
    data = discretize(basis, events, m0=config.m0)
    options = SolveOptions(max_iters=config.max_iters, tol=config.tol)
    base = estimate_mle(LikelihoodContext(basis, data), options=options)
    err0 = float(np.linalg.norm(base.x_hat - x_bar))
    out = {("none", 0.0): (err0, base.converged)}
    for scheme in config.schemes:
        if scheme == "none":
            continue
        for j, ratio in enumerate(config.beta_grid):
            if ratio == 0:
                out[(scheme, ratio)] = (err0, True)
                continue
            beta = ratio * r_max
            if scheme == "noise":
                rho = sample_homogeneous(beta, basis.domain, seed.derive("noise", j))
                ctx = LikelihoodContext(basis, data, augmentation=rho, beta=beta)
            else:
                ctx = LikelihoodContext(basis, data, regularizer=Regularizer(beta))
            res = _solve(ctx, options, base.x_hat)
            out[(scheme, ratio)] = (float(np.linalg.norm(res.x_hat - x_bar)), res.converged)
    return err0, out


def run_reg_study(config: RegStudyConfig, jobs: int = 1) -> QuantileTable:
    """Relative error of regularized vs unregularized counting-model estimates.

    Per trial: draw exponential coefficients scaled to the expected event
    count, sample and bin events, solve the plain MLE, then every
    (scheme, beta) variant on the same data. Aborts with :class:`StudyError`
    if more than 1% of solves fail to converge.
    """
    results = run_trials(_reg_trial, [(config, i) for i in range(config.trials)], jobs)
    keys = [("none", 0.0)] if "none" in config.schemes else []
    keys += [(s, r) for s in config.schemes if s != "none" for r in config.beta_grid]
    solves = failures = 0
    bad_trials = []
    first = results[0][1]
    for i, (_, out) in enumerate(results):
        for key, (_, ok) in out.items():
            if key[1] == 0 and key[0] != "none":
                continue
            solves += 1
            if not ok:
                failures += 1
                bad_trials.append((i, key))
    if failures > MAX_FAILURE_RATE * solves:
        raise StudyError(f"{failures} of {solves} solves did not converge; first: {bad_trials[:5]}")
    rows, relative, absolute = [], {}, {}
    for key in keys:
        if key not in first:
            continue
        abs_err = np.array([out[key][0] for _, out in results])
        err0 = np.array([e0 for e0, _ in results])
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(abs_err == err0, 1.0, abs_err / err0)
        relative[key], absolute[key] = rel, abs_err
        rows.append(QuantileRow(key[0], key[1], *_quantiles(rel), *_quantiles(abs_err), len(results)))
    return QuantileTable(rows, relative, absolute, solves, failures)


# ---------------------------------------------------------------------------


@dataclass
class BoundTightness:
    errors: np.ndarray
    error_quantiles: tuple
    mean_sq_error: float
    mean_sq_error_se: float
    report: BoundReport
    coverage_fraction: float
    claimed_probability: float
    r_min: float
    r_max: float
    failures: int

    def to_dict(self) -> dict:
        return {
            "error_q10": self.error_quantiles[0],
            "error_median": self.error_quantiles[1],
            "error_q90": self.error_quantiles[2],
            "mean_sq_error": self.mean_sq_error,
            "mean_sq_error_se": self.mean_sq_error_se,
            "theorem1_bound": self.report.bound,
            "coverage_fraction": self.coverage_fraction,
            "claimed_probability": self.claimed_probability,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "failures": self.failures,
            "report": self.report.to_dict(),
        }


def _tightness_trial(job):
    basis, x_bar, seed, constraints, options = job
    events = sample_arrivals(basis, x_bar, rng=seed)
    res = estimate_mle(LikelihoodContext(basis, events), constraints, options=options)
    return float(np.linalg.norm(res.x_hat - x_bar)), res.converged


def _as_seed(rng) -> RngSeed:
    if isinstance(rng, RngSeed):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng))
    if isinstance(rng, np.random.Generator):
        return RngSeed(int(rng.integers(0, 2**63)))
    raise TypeError("rng must be an RngSeed, integer seed or numpy Generator")


def run_bound_tightness(basis: BasisSpec, x_bar, zeta: float, trials: int, rng,
                        constraints: ConstraintSet | None = None,
                        options: SolveOptions | None = None, jobs: int = 1) -> BoundTightness:
    """Empirical error of the arrival-model MLE against the full-support bound."""
    x_bar = np.asarray(x_bar, dtype=float)
    r_min, r_max = intensity_range(basis, x_bar)
    report = theorem_bound(gram_summary(basis), r_min, r_max, zeta)
    seed = _as_seed(rng)
    jobs_ = [(basis, x_bar, seed.derive("tightness", i), constraints, options) for i in range(trials)]
    out = run_trials(_tightness_trial, jobs_, jobs)
    errors = np.array([e for e, _ in out])
    failures = sum(not ok for _, ok in out)
    if failures > MAX_FAILURE_RATE * trials:
        raise StudyError(f"{failures} of {trials} solves did not converge")
    sq = errors**2
    return BoundTightness(errors, _quantiles(errors), float(exact_mean(sq[:, None])[0]),
                          float(standard_error(sq[:, None])[0]), report,
                          float(np.mean(errors < report.bound)), report.probability, r_min, r_max, failures)


@dataclass
class LemmaStudy:
    l1: np.ndarray
    l2: np.ndarray
    l1_bounds: np.ndarray
    l2_bound: float
    l1_exceedance: float
    l2_shortfall: float
    l1_allowed: float
    l2_allowed: float
    residual_mean: np.ndarray
    residual_se: np.ndarray

    def to_dict(self) -> dict:
        return {
            "l1_exceedance": self.l1_exceedance,
            "l1_allowed": self.l1_allowed,
            "l2_shortfall": self.l2_shortfall,
            "l2_allowed": self.l2_allowed,
            "l2_bound": self.l2_bound,
            "l1_bound_median": float(np.median(self.l1_bounds)),
            "residual_mean": self.residual_mean.tolist(),
            "residual_se": self.residual_se.tolist(),
        }


def _lemma_trial(job):
    basis, x_bar, support, seed = job
    events = sample_arrivals(basis, x_bar, rng=seed)
    return lemma_quantities(basis, x_bar, events, support)


def run_lemma_study(basis: BasisSpec, x_bar, support, zeta: float, trials: int, rng,
                    jobs: int = 1) -> LemmaStudy:
    """Exceedance rates of the two concentration inequalities.

    The first bound uses the realized event count of each trial.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    summary = gram_summary(basis, support)
    r_min, _ = intensity_range(basis, x_bar)
    m_bar = expected_count(basis, x_bar)
    seed = _as_seed(rng)
    jobs_ = [(basis, x_bar, support, seed.derive("lemma", i)) for i in range(trials)]
    out = run_trials(_lemma_trial, jobs_, jobs)
    l1 = np.array([q.l1_quantity for q in out])
    l2 = np.array([q.l2_quantity for q in out])
    b1 = np.array([lemma1_bound(zeta, summary, r_min, q.events, m_bar) for q in out])
    b2 = lemma2_bound(zeta, summary, r_min)
    resid = np.array([q.residual for q in out])
    s = summary.size
    return LemmaStudy(l1, l2, b1, b2, float(np.mean(l1 > b1)), float(np.mean(l2 < b2)),
                      (s + 1) * math.exp(-zeta), s * math.exp(-zeta),
                      exact_mean(resid), standard_error(resid))
