"""Sampling of arrival data and its discretization into bin counts."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import BasisSpec, Domain, bin_integrals, element_integrals, offset_integral
from .errors import BoundViolationError, DomainError, FeasibilityError

RATE_SAFETY = 1.1
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSeed:
    """A (seed, stream) pair naming an independent, reproducible random stream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = int(getattr(self, name))
            if not 0 <= v <= _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")
            object.__setattr__(self, name, v)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(seq))

    def derive(self, *keys) -> "RngSeed":
        """Child stream keyed by ``keys``; independent of derivation order elsewhere."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream.to_bytes(8, "little"))
        for k in keys:
            h.update(b"\x00" + str(k).encode())
        return RngSeed(self.seed, int.from_bytes(h.digest(), "little"))


def _as_generator(rng):
    if isinstance(rng, RngSeed):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngSeed or numpy Generator")


@dataclass(frozen=True, eq=False)
class EventSet:
    """Sorted event coordinates inside ``domain``."""

    coordinates: np.ndarray
    domain: Domain

    def __post_init__(self):
        c = np.array(self.coordinates, dtype=float).ravel()
        if c.size and (np.any(np.diff(c) < 0)):
            c = np.sort(c)
        if not np.all(self.domain.contains(c)):
            raise DomainError("event coordinate outside domain")
        c.setflags(write=False)
        object.__setattr__(self, "coordinates", c)

    @property
    def count(self) -> int:
        return int(self.coordinates.size)

    def __len__(self):
        return self.count

    def union(self, other: "EventSet") -> "EventSet":
        return EventSet(np.concatenate([self.coordinates, other.coordinates]), self.domain)


@dataclass(frozen=True, eq=False)
class CountData:
    """Bin counts with the per-bin integrals of ``g`` and ``gamma``."""

    edges: np.ndarray
    counts: np.ndarray
    g_integrals: np.ndarray
    design_rows: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise DomainError("bin edges must be strictly increasing")
        if counts.shape != (edges.size - 1,):
            raise ValueError("one count per bin required")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be nonnegative integers")
        rows = np.asarray(self.design_rows, dtype=float)
        if rows.shape[0] != counts.size or not np.all(np.isfinite(rows)):
            raise ValueError("design rows must be finite with one row per bin")
        for name, arr in (("edges", edges), ("counts", counts.astype(np.int64)),
                          ("g_integrals", np.asarray(self.g_integrals, dtype=float)),
                          ("design_rows", rows)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m0(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _extrema(basis, x_key):
    from .likelihood import feasibility_margin

    return feasibility_margin(basis, np.array(x_key))


def expected_count(basis: BasisSpec, x) -> float:
    """``M̄ = int R_x``; raises :class:`FeasibilityError` for a negative intensity."""
    x = np.asarray(x, dtype=float)
    rep = _extrema(basis, tuple(x.tolist()))
    if not rep.feasible:
        raise FeasibilityError(
            f"intensity is negative (min {rep.min_intensity:.6g} at t={rep.argmin:.6g})",
            rep.argmin, rep.min_intensity)
    return offset_integral(basis) + float(element_integrals(basis) @ x)


def sample_homogeneous(rate: float, domain: Domain, rng) -> EventSet:
    """Homogeneous Poisson process of the given rate on ``domain``."""
    if not rate >= 0:
        raise ValueError("rate must be nonnegative")
    gen = _as_generator(rng)
    n = gen.poisson(rate * domain.volume)
    t = gen.uniform(domain.lower, domain.upper, size=n)
    return EventSet(np.sort(t), domain)


def sample_arrivals(basis: BasisSpec, x, rate_bound: float | None = None, rng=None) -> EventSet:
    """Draw event coordinates from intensity ``R_x`` by thinning.

    Parameters
    ----------
    basis : BasisSpec
    x : array_like
        Coefficients; ``R_x`` must be nonnegative on the domain.
    rate_bound : float, optional
        Dominating rate for the candidate process. Defaults to 1.1 times the
        computed supremum of ``R_x``; an explicit value below that supremum is
        rejected.
    rng : RngSeed or numpy.random.Generator
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.n,):
        raise ValueError(f"expected {basis.n} coefficients")
    rep = _extrema(basis, tuple(x.tolist()))
    if not rep.feasible:
        raise FeasibilityError(
            f"intensity is negative (min {rep.min_intensity:.6g} at t={rep.argmin:.6g})",
            rep.argmin, rep.min_intensity)
    sup = max(rep.max_intensity, 0.0)
    if rate_bound is None:
        rate_bound = RATE_SAFETY * sup
    elif rate_bound < sup:
        raise BoundViolationError(f"rate bound {rate_bound} is below sup intensity {sup}")
    gen = _as_generator(rng)
    dom = basis.domain
    if rate_bound == 0:
        return EventSet(np.empty(0), dom)
    n = gen.poisson(rate_bound * dom.volume)
    cand = gen.uniform(dom.lower, dom.upper, size=n)
    u = gen.uniform(size=n)
    r = basis.intensity(x, cand)
    if np.any(r > rate_bound):
        i = int(np.argmax(r))
        raise BoundViolationError(f"intensity {r[i]:.6g} at t={cand[i]:.6g} exceeds rate bound {rate_bound:.6g}")
    keep = u * rate_bound < r
    return EventSet(np.sort(cand[keep]), dom)


def bin_edges(domain: Domain, m0: int) -> np.ndarray:
    if int(m0) < 1:
        raise ValueError("m0 must be at least 1")
    return np.linspace(domain.lower, domain.upper, int(m0) + 1)


def bin_counts(events: EventSet, edges) -> np.ndarray:
    """Half-open ``[left, right)`` membership; the last bin is closed."""
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, events.coordinates, side="right") - 1
    idx = np.clip(idx, 0, edges.size - 2)
    inside = (events.coordinates >= edges[0]) & (events.coordinates <= edges[-1])
    return np.bincount(idx[inside], minlength=edges.size - 1)


def discretize(basis: BasisSpec, events: EventSet, m0: int | None = None, edges=None) -> CountData:
    """Bin an event set into ``m0`` uniform bins (or explicit ``edges``)."""
    if edges is None:
        if m0 is None:
            raise ValueError("give m0 or edges")
        edges = bin_edges(basis.domain, m0)
    else:
        edges = np.asarray(edges, dtype=float)
        if not np.isclose(edges[0], basis.domain.lower) or not np.isclose(edges[-1], basis.domain.upper):
            raise DomainError("bin edges must span the domain")
    g_m, rows = bin_integrals(basis, edges)
    return CountData(edges, bin_counts(events, edges), g_m, rows)
