"""Acceptance criteria, each run at its stated scale and tolerance.

Every test records its criterion number; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the session.
"""

import json
import math
import time

import numpy as np
import pytest

from linpoisson.basis import (BasisSpec, Constant, Domain, Gaussian, gram_matrix, gram_summary,
                              indicator_basis)
from linpoisson.bounds import c_alpha_s, fisher_mc, intensity_range, inverse_trace_ordering
from linpoisson.cli import main
from linpoisson.experiments import RegStudyConfig, run_bound_tightness, run_lemma_study, run_reg_study
from linpoisson.likelihood import LikelihoodContext, gradient, nll
from linpoisson.process import RngSeed, bin_counts, bin_edges, discretize, sample_arrivals
from linpoisson.solver import estimate_mle

from oracles import central_difference, contexts, counting_nll_on_mesh, feasible_points, grid_search, max_relative_error


def gaussian_five(offset):
    """Five Gaussians of width 0.4 on unit-spaced centers over [0, 5]."""
    return BasisSpec(Domain(0.0, 5.0), Constant(offset),
                     tuple(Gaussian(k + 0.5, 0.4) for k in range(5)))


@pytest.fixture
def criterion(record_property):
    def tag(n, summary):
        record_property("criterion", n)
        record_property("summary", summary)

        def detail(text):
            record_property("detail", text)
            print(f"criterion {n}: {text}")
        return detail
    return tag


def test_criterion_01_identity_closed_form(criterion):
    detail = criterion(1, "identity basis: MLE equals per-bin counts; mean squared error matches sum of x_bar")
    n, trials = 20, 5000
    basis = indicator_basis(n)
    x_bar = RngSeed(2024).generator().uniform(5.0, 20.0, n)
    edges = bin_edges(basis.domain, n)
    start = time.perf_counter()
    worst = 0.0
    sq = np.empty(trials)
    for k in range(trials):
        ev = sample_arrivals(basis, x_bar, rng=RngSeed(1, k))
        res = estimate_mle(LikelihoodContext(basis, ev))
        counts = bin_counts(ev, edges)
        worst = max(worst, float(np.max(np.abs(res.x_hat - counts))))
        sq[k] = float(np.sum((res.x_hat - x_bar) ** 2))
    elapsed = time.perf_counter() - start
    mean, se = math.fsum(sq) / trials, sq.std(ddof=1) / math.sqrt(trials)
    detail(f"max deviation {worst:.2e}; mean sq err {mean:.3f} vs {x_bar.sum():.3f} "
           f"(se {se:.3f}); {elapsed:.1f} s")
    assert worst <= 1e-8
    assert abs(mean - x_bar.sum()) <= 3 * se
    assert elapsed <= 60


def test_criterion_02_gradients(criterion):
    detail = criterion(2, "analytic gradients match central differences for all four likelihood kinds")
    ctxs = contexts(seed=2024)
    worst = {}
    for kind in ("arrival", "counting", "augmented", "det"):
        ctx = ctxs[kind]
        worst[kind] = max(max_relative_error(central_difference(lambda z: nll(ctx, z), x), gradient(ctx, x))
                          for x in feasible_points(10, np.random.default_rng(7)))
    detail(", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-6


def test_criterion_03_grid_oracle(criterion):
    detail = criterion(3, "two-coefficient counting MLE agrees with a 400x400 grid search")
    rng = np.random.default_rng(303)
    gaps = []
    for k in range(20):
        c = np.sort(rng.uniform(0.15, 0.85, 2))
        w = rng.uniform(0.08, 0.25, 2)
        basis = BasisSpec(Domain(0.0, 1.0), Constant(float(rng.uniform(1.0, 5.0))),
                          (Gaussian(float(c[0]), float(w[0])), Gaussian(float(c[1]), float(w[1]))))
        x_bar = rng.uniform(20.0, 80.0, 2)
        data = discretize(basis, sample_arrivals(basis, x_bar, rng=RngSeed(3, k)), int(rng.integers(5, 21)))
        res = estimate_mle(LikelihoodContext(basis, data))
        t = np.linspace(0.0, 1.0, 512)
        check = (basis.offset_at(t), basis.evaluate(t))

        def f(u, v):
            return counting_nll_on_mesh(data, u, v, check)

        # Box of +-8 standard deviations from the Fisher information at the truth.
        A = data.design_rows
        fisher = (A / (data.g_integrals + A @ x_bar)[:, None]).T @ A
        half = 8 * np.sqrt(np.diag(np.linalg.inv(fisher)))
        lo, hi = x_bar - half, x_bar + half
        assert np.all(res.x_hat > lo) and np.all(res.x_hat < hi), "optimum outside the grid box"
        best, _, resolution = grid_search(f, lo, hi)
        at_solution = float(f(np.array(res.x_hat[0]), np.array(res.x_hat[1])))
        gaps.append((best - at_solution, resolution))
        assert at_solution <= best + 1e-9
        assert best - at_solution <= resolution
    detail(f"grid minus solver NLL in [{min(g for g, _ in gaps):.2e}, {max(g for g, _ in gaps):.2e}], "
           f"cell variation >= {min(r for _, r in gaps):.2e}")


@pytest.fixture(scope="module")
def fisher_cases():
    identity = indicator_basis(5)
    x_id = np.array([8.0, 15.0, 25.0, 40.0, 60.0])
    gauss = gaussian_five(offset=10.0)
    x_g = np.array([30.0, 12.0, 45.0, 20.0, 35.0])
    return {
        "identity": (identity, x_id, fisher_mc(identity, x_id, 10_000, RngSeed(41))),
        "gaussian": (gauss, x_g, fisher_mc(gauss, x_g, 10_000, RngSeed(42))),
    }


def test_criterion_04_gamma_identity(criterion, fisher_cases):
    detail = criterion(4, "Monte-Carlo mean of A'DA matches Gamma entrywise within 3 s.e.")
    worst = {}
    for name, (basis, _, est) in fisher_cases.items():
        gram = gram_matrix(basis)
        dev = np.abs(est.gamma_check - gram)
        z = np.where(est.gamma_check_se > 0, dev / np.where(est.gamma_check_se > 0, est.gamma_check_se, 1), 0.0)
        assert np.all(dev[est.gamma_check_se == 0] == 0)
        worst[name] = float(z.max())
    detail(", ".join(f"{k} max |dev|/se {v:.2f}" for k, v in worst.items()))
    assert max(worst.values()) <= 3


def test_criterion_05_crlb_sandwich(criterion, fisher_cases):
    detail = criterion(5, "CRLB trace lies between Tr(Gamma^-1) R_min and Tr(Gamma^-1) R_max")
    notes = []
    for name, (basis, x, est) in fisher_cases.items():
        inv_tr, _ = inverse_trace_ordering(gram_matrix(basis))
        r_min, r_max = intensity_range(basis, x)
        lo, hi = inv_tr * r_min - 3 * est.crlb_trace_se, inv_tr * r_max + 3 * est.crlb_trace_se
        notes.append(f"{name} {est.crlb_trace:.3f} in [{lo:.3f}, {hi:.3f}]")
        assert lo <= est.crlb_trace <= hi
    basis, r = indicator_basis(5), 30.0
    est = fisher_mc(basis, np.full(5, r), 10_000, RngSeed(43))
    target = inverse_trace_ordering(gram_matrix(basis))[0] * r
    notes.append(f"homogeneous {est.crlb_trace:.3f} vs {target:.3f} (se {est.crlb_trace_se:.3f})")
    detail("; ".join(notes))
    assert abs(est.crlb_trace - target) <= 3 * est.crlb_trace_se


def test_criterion_06_constants(criterion):
    detail = criterion(6, "c_alpha_s reproduces the tabulated constants")
    c5, c3, cinf = c_alpha_s(5, 1), c_alpha_s(3, 1), c_alpha_s(math.inf, 1)
    detail(f"c(5,1) = {c5:.4f}, c(3,1) = {c3:.4f}, c(inf,1) = {cinf:.4f}")
    assert c5 < 16
    assert c3 < 33
    assert abs(cinf - 4.714) <= 0.01


def test_criterion_07_lemma_concentration(criterion):
    detail = criterion(7, "lemma bounds hold at their stated probabilities")
    n, zeta = 5, 3.0
    start = time.perf_counter()
    out = run_lemma_study(indicator_basis(n), np.full(n, 50.0), None, zeta, 10_000, RngSeed(7))
    elapsed = time.perf_counter() - start
    detail(f"l1 exceedance {out.l1_exceedance:.4f} (allowed {out.l1_allowed:.4f} + 0.01), "
           f"l2 shortfall {out.l2_shortfall:.4f} (allowed {out.l2_allowed:.4f} + 0.01); {elapsed:.1f} s")
    assert out.l1_exceedance <= out.l1_allowed + 0.01
    assert out.l2_shortfall <= out.l2_allowed + 0.01
    assert elapsed <= 300


def test_criterion_08_theorem_coverage(criterion):
    detail = criterion(8, "error stays below the full-support bound in at least 90% of trials")
    basis = gaussian_five(offset=30.0)
    x_bar = np.array([40.0, 25.0, 60.0, 35.0, 50.0])
    zeta = math.log((2 * basis.n + 1) / 0.1)
    out = run_bound_tightness(basis, x_bar, zeta, 2000, RngSeed(8))
    detail(f"coverage {out.coverage_fraction:.4f}, bound {out.report.bound:.2f}, "
           f"median error {out.error_quantiles[1]:.2f}, alpha {out.report.alpha:.2f}, "
           f"claimed probability {out.claimed_probability:.3f}")
    assert out.report.precondition_ok
    assert out.claimed_probability >= 0.9 - 1e-12
    assert out.coverage_fraction >= 0.9


def test_criterion_09_regularization_study(criterion):
    detail = criterion(9, "regularization study shows the three qualitative findings")
    config = RegStudyConfig(n_basis=20, m0=200, expected_events=100.0,
                            beta_grid=(0.0, 0.1, 0.3, 1.0, 3.0, 10.0), trials=200)
    start = time.perf_counter()
    table = run_reg_study(config)
    elapsed = time.perf_counter() - start
    noise = [table.row("noise", b).median for b in config.beta_grid]
    det = [table.row("det", b).median for b in config.beta_grid]
    detail("noise medians " + " ".join(f"{v:.3f}" for v in noise)
           + "; det medians " + " ".join(f"{v:.3f}" for v in det)
           + f"; {table.failures}/{table.solves} failed solves; {elapsed:.0f} s")
    for scheme in ("noise", "det"):
        assert np.all(table.relative[(scheme, 0.0)] == 1.0)
    assert all(a <= b for a, b in zip(noise, noise[1:]))
    assert table.row("noise", 1.0).median > 1.5
    assert abs(det[-1] - det[-2]) / det[-2] < 0.1
    assert table.row("det", 1.0).median < table.row("noise", 1.0).median
    assert elapsed <= 900


def test_criterion_10_cli_reproducible(criterion, tmp_path):
    detail = criterion(10, "repeated CLI invocations with the same seed give byte-identical files")
    model = tmp_path / "model.json"
    model.write_text(json.dumps(gaussian_five(offset=5.0).to_dict()))
    coeffs = tmp_path / "x.json"
    coeffs.write_text(json.dumps([20.0, 10.0, 30.0, 15.0, 25.0]))
    config = tmp_path / "reg.json"
    config.write_text(json.dumps({"n_basis": 6, "m0": 30, "trials": 4, "beta_grid": [0, 0.5, 2]}))
    commands = {
        "simulate": ["simulate", "--model", model, "--coeffs", coeffs, "--seed", 5],
        "discretize": ["discretize", "--model", model, "--events", tmp_path / "ev.csv", "--m0", 25],
        "estimate": ["estimate", "--model", model, "--events", tmp_path / "ev.csv", "--reg", "noise",
                     "--beta", 4, "--seed", 5],
        "estimate-counts": ["estimate", "--model", model, "--counts", tmp_path / "counts.csv", "--nonneg"],
        "bounds": ["bounds", "--model", model, "--coeffs", coeffs, "--zeta", 3, "--m0", 25, "--rip", 2],
        "crlb": ["crlb", "--model", model, "--coeffs", coeffs, "--trials", 300, "--seed", 5],
        "tightness": ["experiment", "tightness", "--model", model, "--coeffs", coeffs, "--trials", 30,
                      "--seed", 5],
        "lemma": ["experiment", "lemma", "--model", model, "--coeffs", coeffs, "--trials", 200, "--seed", 5],
        "reg": ["experiment", "reg", "--config", config, "--seed", 5],
    }
    suffix = {"simulate": "csv", "discretize": "csv", "reg": "csv"}
    assert main([str(a) for a in commands["simulate"]] + ["--out", str(tmp_path / "ev.csv")]) == 0
    assert main([str(a) for a in commands["discretize"]] + ["--out", str(tmp_path / "counts.csv")]) == 0
    same = []
    for name, argv in commands.items():
        ext = suffix.get(name, "json")
        outs = []
        for rep in ("a", "b"):
            path = tmp_path / f"{name}.{rep}.{ext}"
            assert main([str(a) for a in argv] + ["--out", str(path)]) == 0, name
            outs.append(path.read_bytes())
        assert outs[0] == outs[1], name
        same.append(name)
    detail("identical: " + ", ".join(same))
