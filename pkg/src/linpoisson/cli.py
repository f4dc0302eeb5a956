"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 numeric or feasibility
failure. Every input is read and validated before any output is written.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io as lpio
from .basis import bin_integrals, gram_summary, rip_constant
from .bounds import (counting_bound, fisher_mc, inverse_trace_ordering, intensity_range, noised_bound,
                     rip_bound, sample_complexity_check, theorem_bound)
from .errors import LinPoissonError
from .experiments import RegStudyConfig, run_bound_tightness, run_lemma_study, run_reg_study
from .likelihood import LikelihoodContext, Regularizer
from .process import CountData, RngSeed, bin_edges, discretize, sample_arrivals, sample_homogeneous
from .solver import ConstraintSet, IntensityBox, SolveOptions, estimate_mle, estimate_mle_sparse, naive_r_max


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _rmax(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _index_list(text):
    try:
        out = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated indices, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty index list")
    return out


def _common(p, out_required=False):
    p.add_argument("--seed", type=_u64, default=0, help="master seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for Monte-Carlo loops")
    p.add_argument("--out", required=out_required, help="machine-readable output file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linpoisson", description="Estimation and error bounds for linear Poisson intensity models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample events from a model and coefficients")
    p.add_argument("--model", required=True)
    p.add_argument("--coeffs", required=True)
    p.add_argument("--rate-bound", type=float, default=None)
    _common(p, out_required=True)

    p = sub.add_parser("discretize", help="bin events into counts")
    p.add_argument("--model", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--m0", type=_positive_int, required=True)
    _common(p, out_required=True)

    p = sub.add_parser("estimate", help="maximum-likelihood coefficients")
    p.add_argument("--model", required=True)
    data = p.add_mutually_exclusive_group(required=True)
    data.add_argument("--events")
    data.add_argument("--counts")
    p.add_argument("--max-iters", type=int, default=50_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--method", choices=("scaled", "gradient"), default="scaled")
    p.add_argument("--l1", type=float, default=None, metavar="ETA")
    p.add_argument("--nonneg", action="store_true")
    p.add_argument("--support", type=_index_list, default=None, help="0-based indices, e.g. 0,2,5")
    p.add_argument("--rmax", type=_rmax, default=None,
                   help="intensity ceiling, or 'auto' for the heuristic max binned rate")
    p.add_argument("--reg", choices=("none", "noise", "det"), default="none")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--sparsity", type=_positive_int, default=None)
    p.add_argument("--sparse-mode", choices=("exhaustive", "iterative"), default="exhaustive")
    _common(p)

    p = sub.add_parser("bounds", help="evaluate error bounds and preconditions")
    p.add_argument("--model", required=True)
    p.add_argument("--rmin", type=float, default=None)
    p.add_argument("--rmax", type=float, default=None)
    p.add_argument("--coeffs", default=None, help="take r_min/r_max from these coefficients")
    p.add_argument("--zeta", type=float, required=True)
    p.add_argument("--support", type=_index_list, default=None)
    p.add_argument("--c", type=float, default=None, help="override the constant c")
    p.add_argument("--m0", type=_positive_int, default=None, help="also report the counting-model bound")
    p.add_argument("--rip", type=_positive_int, default=None, metavar="S", help="also report the RIP form")
    _common(p)

    p = sub.add_parser("crlb", help="Monte-Carlo Fisher information and CRLB")
    p.add_argument("--model", required=True)
    p.add_argument("--coeffs", required=True)
    p.add_argument("--trials", type=_positive_int, default=1000)
    _common(p)

    p = sub.add_parser("experiment", help="Monte-Carlo studies")
    p.add_argument("study", choices=("reg", "tightness", "lemma"))
    p.add_argument("--config", help="study config JSON (reg)")
    p.add_argument("--model")
    p.add_argument("--coeffs")
    p.add_argument("--zeta", type=float, default=3.0)
    p.add_argument("--trials", type=_positive_int, default=None)
    p.add_argument("--support", type=_index_list, default=None)
    _common(p, out_required=True)
    return parser


# ---------------------------------------------------------------------------


def _check_support(support, n):
    if support is not None and (min(support) < 0 or max(support) >= n):
        raise UsageError(f"support indices must lie in 0..{n - 1}")


def _load_counts(path, basis):
    edges, counts = lpio.read_counts(path, basis.domain)
    g_m, rows = bin_integrals(basis, edges)
    return CountData(edges, counts, g_m, rows)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _table(pairs):
    width = max(len(k) for k, _ in pairs)
    return "\n".join(f"{k.ljust(width)}  {_fmt(v)}" for k, v in pairs)


def _cmd_simulate(args):
    basis = lpio.load_model(args.model)
    x = lpio.load_coeffs(args.coeffs, basis.n)
    events = sample_arrivals(basis, x, rate_bound=args.rate_bound, rng=RngSeed(args.seed))
    lpio.write_events(args.out, events)
    print(f"sampled {events.count} events -> {args.out}")


def _cmd_discretize(args):
    basis = lpio.load_model(args.model)
    events = lpio.read_events(args.events, basis.domain)
    data = discretize(basis, events, edges=bin_edges(basis.domain, args.m0))
    lpio.write_counts(args.out, data.edges, data.counts)
    print(f"{events.count} events in {data.m0} bins -> {args.out}")


def _cmd_estimate(args):
    basis = lpio.load_model(args.model)
    _check_support(args.support, basis.n)
    if args.reg != "none" and (args.beta is None or not args.beta >= 0):
        raise UsageError("--reg noise/det needs --beta >= 0")
    if args.l1 is not None and not args.l1 > 0:
        raise UsageError("--l1 must be positive")
    if args.rmax not in (None, "auto") and not args.rmax > 0:
        raise UsageError("--rmax must be positive")
    if args.max_iters < 0 or not args.tol > 0:
        raise UsageError("need --max-iters >= 0 and --tol > 0")
    if args.sparsity is not None and (args.sparsity > basis.n or args.support is not None):
        raise UsageError("--sparsity must not exceed N and cannot be combined with --support")
    if args.events is not None:
        data = lpio.read_events(args.events, basis.domain)
    else:
        data = _load_counts(args.counts, basis)
    r_max = args.rmax
    if r_max == "auto":
        r_max = naive_r_max(data)
        print(f"warning: heuristic r_max = {r_max:.6g} (max binned empirical rate)", file=sys.stderr)
    kwargs = {}
    if args.reg == "noise":
        rho = sample_homogeneous(args.beta, basis.domain, RngSeed(args.seed).derive("augmentation"))
        kwargs = {"augmentation": rho, "beta": args.beta}
    elif args.reg == "det":
        kwargs = {"regularizer": Regularizer(args.beta)}
    ctx = LikelihoodContext(basis, data, **kwargs)
    cs = ConstraintSet(l1_radius=args.l1, nonnegative_coeffs=args.nonneg,
                       fixed_support=tuple(args.support) if args.support else None,
                       intensity_box=IntensityBox(r_max) if r_max is not None else None)
    options = SolveOptions(max_iters=args.max_iters, tol=args.tol, method=args.method)
    if args.sparsity is not None:
        res = estimate_mle_sparse(ctx, args.sparsity, cs, options, mode=args.sparse_mode)
    else:
        res = estimate_mle(ctx, cs, options=options)
    out = res.to_dict()
    out["likelihood"] = ctx.kind
    if args.out:
        lpio.write_json(args.out, out)
    print(_table([("likelihood", ctx.kind), ("nll", res.nll_value), ("iterations", res.iterations),
                  ("kkt_residual", res.kkt_residual), ("converged", res.converged),
                  ("min_intensity", res.feasibility.min_intensity)]))
    print("x_hat  " + " ".join(f"{v:.6g}" for v in res.x_hat))
    if not res.converged:
        print(f"warning: solver stopped without converging ({res.message})", file=sys.stderr)


def _cmd_bounds(args):
    basis = lpio.load_model(args.model)
    _check_support(args.support, basis.n)
    if args.coeffs is not None:
        if args.rmin is not None or args.rmax is not None:
            raise UsageError("give either --coeffs or --rmin/--rmax")
        x = lpio.load_coeffs(args.coeffs, basis.n)
        r_min, r_max = intensity_range(basis, x)
    else:
        if args.rmin is None or args.rmax is None:
            raise UsageError("--rmin and --rmax are required without --coeffs")
        r_min, r_max = args.rmin, args.rmax
    if not args.zeta > 0 or not r_max >= r_min > 0:
        raise UsageError("need --zeta > 0 and rmax >= rmin > 0")
    if args.rip is not None and args.rip > basis.n:
        raise UsageError("--rip must not exceed N")
    summary = gram_summary(basis, args.support)
    reports = [theorem_bound(summary, r_min, r_max, args.zeta, args.support, c=args.c)]
    if args.support is None:
        reports.append(noised_bound(summary, r_max, args.zeta, c=args.c))
    if args.m0 is not None:
        _, A = bin_integrals(basis, bin_edges(basis.domain, args.m0))
        reports.append(counting_bound(A, r_min, r_max, args.zeta, c=args.c))
    if args.rip is not None:
        delta = rip_constant(basis, args.rip)
        if delta >= 1:
            raise UsageError(f"delta_{args.rip} = {delta:.6g} >= 1; RIP form undefined")
        reports.append(rip_bound(delta, args.rip, r_min, r_max, args.zeta, summary.sup_norm_2inf, c=args.c))
    sc = sample_complexity_check(summary, r_min, r_max, summary.size)
    inv_tr, ordering = inverse_trace_ordering(summary.gram)
    out = {
        "r_min": r_min, "r_max": r_max,
        "gram": {k: v for k, v in summary.to_dict().items() if k != "gram"},
        "reports": [r.to_dict() for r in reports],
        "sample_complexity": sc.to_dict(),
        "trace_inverse_gram": inv_tr, "trace_over_sigma_sq": ordering,
    }
    if args.out:
        lpio.write_json(args.out, out)
    cols = ("kind", "bound", "probability", "c_value", "alpha", "precondition_ok")
    rows = [[_fmt(getattr(r, c)) for c in cols] for r in reports]
    widths = [max(len(c), *(len(row[i]) for row in rows)) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for row in rows:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    for r in reports:
        print(f"{r.kind}: {r.precondition_detail}")


def _cmd_crlb(args):
    basis = lpio.load_model(args.model)
    x = lpio.load_coeffs(args.coeffs, basis.n)
    est = fisher_mc(basis, x, args.trials, RngSeed(args.seed), jobs=args.jobs)
    r_min, r_max = intensity_range(basis, x)
    inv_tr, _ = inverse_trace_ordering(gram_summary(basis).gram)
    out = est.to_dict()
    out.update({"r_min": r_min, "r_max": r_max, "trace_inverse_gram": inv_tr,
                "sandwich_lower": inv_tr * r_min, "sandwich_upper": inv_tr * r_max})
    if args.out:
        lpio.write_json(args.out, out)
    print(_table([("trials", est.trials), ("crlb_trace", est.crlb_trace), ("crlb_trace_se", est.crlb_trace_se),
                  ("Tr(Gamma^-1) r_min", inv_tr * r_min), ("Tr(Gamma^-1) r_max", inv_tr * r_max)]))


def _cmd_experiment(args):
    if args.study == "reg":
        if args.config is None:
            raise UsageError("experiment reg needs --config")
        try:
            data = lpio.read_json(args.config)
            if not isinstance(data, dict):
                raise ValueError("config must be a JSON object")
            data["master_seed"] = args.seed
            if args.trials is not None:
                data["trials"] = args.trials
            config = RegStudyConfig.from_dict(data)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        table = run_reg_study(config, jobs=args.jobs)
        table.write_csv(args.out)
        print(table.to_csv(), end="")
        return
    if args.model is None or args.coeffs is None:
        raise UsageError(f"experiment {args.study} needs --model and --coeffs")
    basis = lpio.load_model(args.model)
    x = lpio.load_coeffs(args.coeffs, basis.n)
    _check_support(args.support, basis.n)
    if not args.zeta > 0:
        raise UsageError("--zeta must be positive")
    trials = args.trials or 1000
    if args.study == "tightness":
        res = run_bound_tightness(basis, x, args.zeta, trials, RngSeed(args.seed), jobs=args.jobs)
    else:
        res = run_lemma_study(basis, x, args.support, args.zeta, trials, RngSeed(args.seed), jobs=args.jobs)
    out = res.to_dict()
    lpio.write_json(args.out, out)
    print(_table([(k, v) for k, v in out.items() if isinstance(v, (int, float, bool))]))


_COMMANDS = {
    "simulate": _cmd_simulate,
    "discretize": _cmd_discretize,
    "estimate": _cmd_estimate,
    "bounds": _cmd_bounds,
    "crlb": _cmd_crlb,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except lpio.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LinPoissonError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
