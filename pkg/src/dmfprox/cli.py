"""Command-line entry point: ``dmfprox <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import InputError, NumericalError, ProblemSpec, von_neumann_gap, write_matrix_csv
from .experiments import (
    ExperimentConfig,
    SWEEP_COLUMNS,
    aligned_pair,
    rows_to_csv,
    run_verification,
    scalar_fd_spectrum,
    sweep_collapse,
    write_sweep_svg,
)
from .matrix import balanced_factors, layer_norm_constant, n_params, solve_closed_form, trace_lower_bound
from .scalar import hessian_spectrum_scalar, prox_scalar
from .training import GdConfig, balance_gap, gd_grid_search, gd_run, hessian_trace_exact

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _dump(obj):
    return json.dumps(obj, indent=2, default=_plain)


def _out_dir(args, cfg):
    out = getattr(args, "out", None)
    path = Path(out if out is not None else cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args):
    config = getattr(args, "config", None)
    cfg = ExperimentConfig.from_json(config) if config else ExperimentConfig()
    overrides = {
        "target_path": getattr(args, "target", None),
        "rows": getattr(args, "rows", None),
        "cols": getattr(args, "cols", None),
        "seed": getattr(args, "seed", None),
        "depth": getattr(args, "depth", None),
        "lam": getattr(args, "lam", None),
        "alpha": getattr(args, "alpha", None),
        "hidden": getattr(args, "hidden", None),
        "max_iters": getattr(args, "max_iters", None),
    }
    # a flag replaces whichever alternative the config file chose
    if overrides["lam"] is not None:
        cfg.alpha = None
    if overrides["alpha"] is not None:
        cfg.lam = None
    if overrides["target_path"] is not None:
        cfg.rows = cfg.cols = None
    if overrides["rows"] is not None or overrides["cols"] is not None:
        cfg.target_path = None
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "dims", None):
        cfg.dims = [int(d) for d in args.dims.split(",")]
    if getattr(args, "alphas", None):
        cfg.alphas = [float(a) for a in args.alphas.split(",")]
    return cfg.validate()


def _problem(cfg):
    target = cfg.load_target()
    return ProblemSpec(target, cfg.depth, cfg.resolve_lambda(target))


def cmd_prox(args):
    res = prox_scalar(args.m, args.lam, args.depth)
    print(_dump(res.to_dict()))
    return EXIT_OK


def cmd_spectrum(args):
    cf = hessian_spectrum_scalar(args.m, args.lam, args.depth)
    fd = scalar_fd_spectrum(args.m, args.lam, args.depth)
    ref = cf.eigenvalues()
    rel = np.abs(fd - ref) / np.abs(ref)
    print(f"{'closed_form':>24} {'finite_diff':>24} {'rel_err':>10}")
    for a, b, e in zip(ref, fd, rel):
        print(f"{a:24.17g} {b:24.17g} {e:10.2e}")
    print(f"lambda_max = {cf.lambda_max:.17g}; layer magnitude w = {cf.layer_magnitude:.17g}")
    print(f"max relative error = {rel.max():.3e}")
    return EXIT_OK


def _solve(args):
    cfg = _config(args)
    spec = _problem(cfg)
    return cfg, spec, solve_closed_form(spec)


def cmd_solve(args):
    cfg, spec, sol = _solve(args)
    out = _out_dir(args, cfg)
    (out / "solution.json").write_text(_dump(sol.to_dict()) + "\n")
    rows = [
        {"index": i, "sigma_target": float(s), "sigma_star": abs(p.minimizer),
         "branch": p.branch.value, "unique": p.unique}
        for i, (s, p) in enumerate(zip(sol.svd.sigma, sol.prox_results))
    ]
    (out / "sigmas.csv").write_text(rows_to_csv(rows, ("index", "sigma_target", "sigma_star", "branch", "unique")))
    write_matrix_csv(out / "m_star.csv", sol.m_star)
    print(_dump(sol.to_dict()))
    return EXIT_OK


def cmd_factorize(args):
    cfg, spec, sol = _solve(args)
    dims = cfg.resolve_dims(spec.shape)
    stack = balanced_factors(sol.m_star, dims)
    out = _out_dir(args, cfg)
    for i, w in enumerate(stack.layers, start=1):
        write_matrix_csv(out / f"layer_{i}.csv", w)
    g = layer_norm_constant(sol.m_star, spec.depth)
    summary = {
        "dims": list(dims),
        "n_params": n_params(dims),
        "layer_norms": [float(v) for v in stack.frobenius_norms()],
        "layer_norm_constant": g,
        "balance_gap": balance_gap(stack) if spec.depth > 1 else 0.0,
        "product_error": float(np.linalg.norm(stack.product() - sol.m_star)),
        "hessian_trace": hessian_trace_exact(stack, spec),
        "trace_lower_bound": trace_lower_bound(sol.m_star, g, spec, dims),
        "solution": sol.to_dict(),
    }
    (out / "factors.json").write_text(_dump(summary) + "\n")
    print(_dump(summary))
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    spec = _problem(cfg)
    dims = cfg.resolve_dims(spec.shape)
    if args.step_size is not None:
        conf = GdConfig(args.step_size, dims, args.init_scale, cfg.seed, cfg.max_iters, cfg.grad_tol)
        trace = gd_run(spec, conf)
    else:
        trace = gd_grid_search(spec, cfg.grid(dims), max_workers=args.workers)
    out = _out_dir(args, cfg)
    (out / "trace.json").write_text(_dump(trace.to_dict(include_layers=True)) + "\n")
    (out / "history.csv").write_text(trace.history_csv())
    sol = solve_closed_form(spec)
    summary = {
        "config": trace.config.to_dict(),
        "final_objective": trace.final_objective,
        "closedform_objective": sol.objective_value,
        "product_distance": float(np.linalg.norm(trace.final_product - sol.m_star)),
        "converged": trace.converged,
        "diverged": trace.diverged,
    }
    print(_dump(summary))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    target = cfg.load_target()
    dims = cfg.resolve_dims(target.shape)
    rows = sweep_collapse(target, cfg.depth, dims, cfg.alphas, cfg.grid, max_workers=args.workers)
    out = _out_dir(args, cfg)
    (out / "sweep.csv").write_text(rows_to_csv(rows, SWEEP_COLUMNS))
    if getattr(args, "emit_svg", False) and not write_sweep_svg(rows, out / "sweep.svg"):
        print("matplotlib not available; skipped sweep.svg", file=sys.stderr)
    print(rows_to_csv(rows, SWEEP_COLUMNS), end="")
    return EXIT_OK


def cmd_verify(args):
    checks = run_verification(getattr(args, "seed", 0), args.size_class)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_vn_test(args):
    rng = np.random.default_rng(getattr(args, "seed", 0))
    lo, hi = np.inf, 0.0
    for _ in range(args.pairs):
        a = rng.standard_normal((args.rows, args.cols))
        b = rng.standard_normal((args.rows, args.cols))
        lo = min(lo, von_neumann_gap(a, b) / (1 + np.linalg.norm(a) * np.linalg.norm(b)))
    for _ in range(args.aligned):
        a, b = aligned_pair(args.rows, args.cols, rng)
        hi = max(hi, abs(von_neumann_gap(a, b)) / (1 + np.linalg.norm(a) * np.linalg.norm(b)))
    ok = bool(lo >= -1e-10 and hi <= 1e-10)
    print(_dump({"random_pairs": args.pairs, "min_scaled_gap": float(lo),
                 "aligned_pairs": args.aligned, "max_scaled_aligned_gap": float(hi), "passed": ok}))
    return EXIT_OK if ok else EXIT_VERIFY


def _add_matrix_args(p):
    p.add_argument("--target", help="headerless CSV file with the target matrix")
    p.add_argument("--rows", type=int, help="rows of a generated Gaussian target")
    p.add_argument("--cols", type=int, help="columns of a generated Gaussian target")
    p.add_argument("--depth", type=int)
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float)
    lam.add_argument("--alpha", type=float, help="lambda as a multiple of the collapse level")
    p.add_argument("--dims", help="comma-separated d_0,...,d_L")
    p.add_argument("--hidden", type=int, help="hidden width when --dims is not given")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps subparser defaults from overwriting flags given before the subcommand
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--emit-svg", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="dmfprox", parents=[common],
                                     description="Closed-form minimizers of l2-regularized deep matrix factorization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prox", parents=[common], help="scalar prox of (m - rho)^2 + lam |rho|^(2/L)")
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.set_defaults(func=cmd_prox)

    p = sub.add_parser("spectrum", parents=[common], help="closed-form vs finite-difference scalar Hessian")
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.set_defaults(func=cmd_spectrum)

    for name, func, text in (("solve", cmd_solve, "closed-form end-to-end minimizer"),
                             ("factorize", cmd_factorize, "closed form plus balanced factors")):
        p = sub.add_parser(name, parents=[common], help=text)
        _add_matrix_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="gradient descent on the factored objective")
    _add_matrix_args(p)
    p.add_argument("--step-size", type=float, help="single run; omit to run the grid search")
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-collapse", parents=[common], help="GD vs closed form over lambda = alpha * tau")
    _add_matrix_args(p)
    p.add_argument("--alphas", help="comma-separated alpha values")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    p.add_argument("--size-class", choices=("small", "full"), default="small")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("vn-test", parents=[common], help="Monte Carlo check of the trace inequality")
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--aligned", type=int, default=1000)
    p.add_argument("--rows", type=int, default=6)
    p.add_argument("--cols", type=int, default=4)
    p.set_defaults(func=cmd_vn_test)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
