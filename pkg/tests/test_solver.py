import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from linpoisson.basis import BasisSpec, Constant, Domain, Gaussian, gaussian_basis, indicator_basis
from linpoisson.errors import CapacityError, InitializationError
from linpoisson.likelihood import LikelihoodContext, Regularizer, nll
from linpoisson.process import (EventSet, RngSeed, bin_counts, discretize, sample_arrivals,
                                sample_homogeneous)
from linpoisson.solver import (ConstraintSet, IntensityBox, SolveOptions, estimate_mle,
                               estimate_mle_sparse, naive_r_max, project_l1)

from oracles import X_SMALL, contexts, counting_nll_on_mesh, grid_search, small_model


def l1_projection_oracle(x, radius):
    """Soft thresholding at the root of ``sum(max(|x| - t, 0)) = radius``."""
    u = np.abs(x)
    if u.sum() <= radius:
        return x.copy()
    t = optimize.brentq(lambda t: np.maximum(u - t, 0).sum() - radius, 0.0, u.max(), xtol=1e-15)
    return np.sign(x) * np.maximum(u - t, 0)


def identity_data(counts):
    n = len(counts)
    basis = indicator_basis(n)
    coords = np.concatenate([k + (np.arange(c) + 0.5) / max(c, 1) for k, c in enumerate(counts)])
    return basis, EventSet(coords, basis.domain)


class TestNaiveRMax:
    def test_counts_over_widths(self):
        basis = indicator_basis(4)
        ev = EventSet(np.array([0.5, 1.2, 1.4, 1.9, 3.1]), basis.domain)
        data = discretize(basis, ev, 8)
        # Bin [1.0, 1.5) holds two events over width 0.5.
        assert naive_r_max(data) == 4.0
        assert naive_r_max(ev, m0=4) == 3.0

    def test_tracks_homogeneous_rate(self):
        dom = Domain(0.0, 1.0)
        ev = sample_homogeneous(5000.0, dom, RngSeed(9))
        assert 5000.0 < naive_r_max(ev, m0=5) < 5600.0

    def test_rejects_empty_and_unknown(self):
        with pytest.raises(ValueError):
            naive_r_max(EventSet(np.empty(0), Domain(0.0, 1.0)))
        with pytest.raises(TypeError):
            naive_r_max(np.ones(3))


class TestProjectL1:
    def test_inside_unchanged(self):
        x = np.array([0.2, -0.3, 0.1])
        np.testing.assert_array_equal(project_l1(x, 1.0), x)

    def test_axis_point(self):
        np.testing.assert_array_equal(project_l1(np.array([3.0, 0.0]), 1.0), [1.0, 0.0])

    def test_dense_boundary_search_2d(self):
        rng = np.random.default_rng(0)
        s = np.linspace(0.0, 4.0, 1_000_000, endpoint=False)
        # Walk the boundary of the unit l1 ball counterclockwise from (1, 0).
        seg, frac = np.floor(s).astype(int), s - np.floor(s)
        corners = np.array([[1, 0], [0, 1], [-1, 0], [0, -1], [1, 0]], dtype=float)
        cand = corners[seg] * (1 - frac)[:, None] + corners[seg + 1] * frac[:, None]
        for _ in range(5):
            x = rng.normal(0, 2, 2)
            if np.abs(x).sum() <= 1:
                continue
            best = cand[np.argmin(((cand - x) ** 2).sum(axis=1))]
            np.testing.assert_allclose(project_l1(x, 1.0), best, atol=1e-5)
            assert abs(np.linalg.norm(project_l1(x, 1.0) - x) - np.linalg.norm(best - x)) < 1e-6

    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(0.01, 40))
    def test_matches_threshold_oracle(self, xs, radius):
        x = np.array(xs)
        np.testing.assert_allclose(project_l1(x, radius), l1_projection_oracle(x, radius), atol=1e-9)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.lists(st.floats(-50, 50), min_size=3, max_size=3),
           st.floats(0.01, 40))
    def test_idempotent_and_nonexpansive(self, a, b, radius):
        a, b = np.array(a), np.array(b)
        pa, pb = project_l1(a, radius), project_l1(b, radius)
        # Thresholding subtracts numbers of the input's size, so rounding scales with it.
        eps = 1e-14 * (1 + np.abs(a).sum())
        np.testing.assert_allclose(project_l1(pa, radius), pa, atol=eps)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9
        assert np.abs(pa).sum() <= radius + eps

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            project_l1(np.ones(2), 0.0)


class TestIdentityClosedForms:
    COUNTS = [3, 0, 7, 12, 1, 5]

    def test_mle_is_counts(self):
        basis, ev = identity_data(self.COUNTS)
        res = estimate_mle(LikelihoodContext(basis, ev))
        assert res.converged
        np.testing.assert_allclose(res.x_hat, self.COUNTS, atol=1e-8)

    def test_counting_mode(self):
        basis, ev = identity_data(self.COUNTS)
        res = estimate_mle(LikelihoodContext(basis, discretize(basis, ev, 6)))
        np.testing.assert_allclose(res.x_hat, self.COUNTS, atol=1e-8)

    def test_l1_ball_scales_counts(self):
        # Stationarity of sum(x - y log x) on sum(x) = eta gives x = y * eta / sum(y).
        basis, ev = identity_data(self.COUNTS)
        res = estimate_mle(LikelihoodContext(basis, ev), ConstraintSet(l1_radius=14.0, nonnegative_coeffs=True))
        np.testing.assert_allclose(res.x_hat, np.array(self.COUNTS) * 14.0 / sum(self.COUNTS), atol=1e-7)

    def test_intensity_box_clips(self):
        basis, ev = identity_data(self.COUNTS)
        res = estimate_mle(LikelihoodContext(basis, ev), ConstraintSet(intensity_box=IntensityBox(6.0)))
        np.testing.assert_allclose(res.x_hat, np.minimum(self.COUNTS, 6.0), atol=1e-7)
        assert res.feasibility.within_box

    def test_fixed_support(self):
        # The support must cover every nonempty bin, else the likelihood is +inf.
        basis, ev = identity_data([3, 0, 7, 12, 0, 0])
        res = estimate_mle(LikelihoodContext(basis, ev), ConstraintSet(fixed_support=(0, 2, 3)))
        np.testing.assert_allclose(res.x_hat, [3, 0, 7, 12, 0, 0], atol=1e-8)
        assert res.support == (0, 2, 3)

    def test_support_missing_events_cannot_start(self):
        basis, ev = identity_data(self.COUNTS)
        with pytest.raises(InitializationError):
            estimate_mle(LikelihoodContext(basis, ev), ConstraintSet(fixed_support=(0, 2, 3)))

    def test_empty_events_nonneg(self):
        basis = BasisSpec(Domain(0.0, 1.0), Constant(0.0), (Gaussian(0.5, 0.2),))
        res = estimate_mle(LikelihoodContext(basis, EventSet(np.empty(0), basis.domain)),
                           ConstraintSet(nonnegative_coeffs=True))
        assert res.converged
        assert res.x_hat[0] == pytest.approx(0.0, abs=1e-10)

    def test_gradient_method(self):
        basis, ev = identity_data(self.COUNTS)
        res = estimate_mle(LikelihoodContext(basis, ev), options=SolveOptions(method="gradient"))
        assert res.converged
        np.testing.assert_allclose(res.x_hat, self.COUNTS, atol=1e-6)


class TestGeneralModels:
    @pytest.mark.parametrize("kind", ["arrival", "counting", "augmented", "det",
                                      "augmented_counting", "det_counting"])
    def test_kkt_and_monotone_history(self, kind):
        ctx = contexts(seed=1)[kind]
        res = estimate_mle(ctx, options=SolveOptions(record_history=True))
        assert res.converged
        assert res.kkt_residual <= 1e-8 * (1 + abs(res.nll_value))
        assert np.all(np.diff(res.nll_history) <= 1e-12)
        assert res.feasibility.feasible

    def test_matches_scipy_with_nonnegativity(self):
        ctx = contexts(seed=2)["arrival"]
        res = estimate_mle(ctx, ConstraintSet(nonnegative_coeffs=True))
        ref = optimize.minimize(lambda z: nll(ctx, z), X_SMALL, jac=lambda z: ctx.terms().gradient(z),
                                bounds=[(0, None)] * 3, method="L-BFGS-B",
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
        assert res.nll_value <= ref.fun + 1e-9
        np.testing.assert_allclose(res.x_hat, ref.x, rtol=1e-5, atol=1e-5)

    def test_iteration_cap_reports_not_converged(self):
        ctx = contexts(seed=3)["arrival"]
        res = estimate_mle(ctx, options=SolveOptions(max_iters=1))
        assert not res.converged
        assert res.message == "iteration limit reached"
        assert np.isfinite(res.nll_value)

    def test_infeasible_init_rejected(self):
        ctx = contexts(seed=3)["arrival"]
        with pytest.raises(InitializationError):
            estimate_mle(ctx, init=np.array([-1000.0, 0.0, 0.0]))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_certificate_from_true_start(self, seed):
        basis = gaussian_basis(5, 0.12, offset=1.0)
        x_bar = np.random.default_rng(seed).uniform(5, 40, 5)
        ctx = LikelihoodContext(basis, sample_arrivals(basis, x_bar, rng=RngSeed(seed)))
        res = estimate_mle(ctx, init=x_bar)
        assert res.nll_value <= nll(ctx, x_bar) + 1e-9

    @pytest.mark.parametrize("kind", ["counting", "augmented_counting", "det_counting"])
    def test_grid_oracle_two_coefficients(self, kind):
        basis = BasisSpec(Domain(0.0, 1.0), Constant(2.0), (Gaussian(0.3, 0.2), Gaussian(0.75, 0.15)))
        x_bar = np.array([30.0, 50.0])
        data = discretize(basis, sample_arrivals(basis, x_bar, rng=RngSeed(21)), 10)
        beta = 4.0
        # Each kind is a plain counting likelihood with modified counts and offsets.
        if kind == "counting":
            ctx, counts, offsets = LikelihoodContext(basis, data), data.counts, data.g_integrals
        elif kind == "augmented_counting":
            rho = sample_homogeneous(beta, basis.domain, RngSeed(22))
            ctx = LikelihoodContext(basis, data, augmentation=rho, beta=beta)
            counts = data.counts + bin_counts(rho, data.edges)
            offsets = data.g_integrals + beta * data.widths
        else:
            ctx = LikelihoodContext(basis, data, regularizer=Regularizer(beta))
            counts = data.counts + beta * data.widths
            offsets = data.g_integrals + beta * data.widths
        t = np.linspace(0.0, 1.0, 512)
        oracle = SimpleNamespace(design_rows=data.design_rows, g_integrals=offsets, counts=np.asarray(counts))

        def f(u, v):
            return counting_nll_on_mesh(oracle, u, v, (basis.offset_at(t), basis.evaluate(t)))

        res = estimate_mle(ctx)
        lo, hi = -0.5 * x_bar, 2.5 * x_bar
        assert np.all(res.x_hat > lo) and np.all(res.x_hat < hi)
        best, _, resolution = grid_search(f, lo, hi)
        at_solution = float(f(np.array(res.x_hat[0]), np.array(res.x_hat[1])))
        assert at_solution <= best + 1e-9
        assert best - at_solution <= resolution


class TestSparse:
    def test_full_sparsity_equals_mle(self):
        ctx = contexts(seed=5)["arrival"]
        a = estimate_mle(ctx)
        b = estimate_mle_sparse(ctx, 3)
        np.testing.assert_allclose(b.x_hat, a.x_hat, rtol=1e-12, atol=1e-12)
        assert b.nll_value == a.nll_value

    def test_counts_supports_and_picks_minimum(self):
        basis = gaussian_basis(6, 0.05)
        x_bar = np.array([0, 40, 0, 0, 25, 0], dtype=float)
        ctx = LikelihoodContext(basis, sample_arrivals(basis, x_bar, rng=RngSeed(3)))
        res = estimate_mle_sparse(ctx, 2)
        assert res.supports_evaluated == 15
        values = {sup: estimate_mle(ctx, ConstraintSet(fixed_support=sup)).nll_value
                  for sup in itertools.combinations(range(6), 2)}
        assert res.nll_value == min(values.values())
        assert res.support == min((v, s) for s, v in values.items())[1]

    def test_planted_support_recovery(self):
        basis = gaussian_basis(6, 0.04)
        x_bar = np.array([0, 400, 0, 0, 300, 0], dtype=float)
        hits = 0
        for k in range(200):
            ctx = LikelihoodContext(basis, sample_arrivals(basis, x_bar, rng=RngSeed(17, k)))
            hits += estimate_mle_sparse(ctx, 2).support == (1, 4)
        assert hits >= 190

    def test_iterative_mode_flags_no_guarantee(self):
        basis = gaussian_basis(6, 0.04)
        x_bar = np.array([0, 400, 0, 0, 300, 0], dtype=float)
        ctx = LikelihoodContext(basis, sample_arrivals(basis, x_bar, rng=RngSeed(5)))
        res = estimate_mle_sparse(ctx, 2, mode="iterative")
        assert not res.optimality_guaranteed
        assert res.support == (1, 4)

    def test_capacity(self):
        basis = indicator_basis(21)
        ctx = LikelihoodContext(basis, EventSet(np.array([0.5]), basis.domain))
        with pytest.raises(CapacityError):
            estimate_mle_sparse(ctx, 2)
