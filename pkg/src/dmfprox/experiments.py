"""Experiment configuration, the collapse sweep and the verification suite."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import InputError, ProblemSpec, read_matrix_csv, schatten_q, von_neumann_gap
from .matrix import FactorStack, balanced_factors, layer_norm_constant, solve_closed_form, trace_lower_bound
from .oracles import fiber_samples, finite_diff_gradient, mean_sq_norm, prox_grid_oracle
from .scalar import collapse_lambda, hessian_spectrum_scalar, interior_local_min, prox_scalar, threshold_m_bar
from .training import gd_grid_search, gradient, hessian_fd, hessian_trace_exact, make_grid

DESK_STEP_SIZES = (3e-3, 1e-2)
# intermediate scales matter: unit-scale init can settle in a spurious minimum
# that keeps a sub-threshold singular value, tiny init collapses to the origin
DESK_INIT_SCALES = (1e-2, 0.3, 0.45, 0.6, 0.8, 1.0)
DESK_SEEDS = (0, 1, 2)
DEFAULT_ALPHAS = tuple(round(0.1 * k, 1) for k in range(1, 21))


@dataclass
class ExperimentConfig:
    """Parameters shared by the matrix-level commands.

    The target comes either from ``target_path`` (headerless CSV) or from a
    seeded standard Gaussian of shape ``rows x cols``. ``lam`` and ``alpha``
    are alternatives; ``alpha`` scales the collapse level of the target.
    """

    target_path: str | None = None
    rows: int | None = None
    cols: int | None = None
    seed: int = 0
    depth: int = 3
    lam: float | None = None
    alpha: float | None = None
    dims: list | None = None
    hidden: int = 16
    step_sizes: list = field(default_factory=lambda: list(DESK_STEP_SIZES))
    init_scales: list = field(default_factory=lambda: list(DESK_INIT_SCALES))
    seeds: list = field(default_factory=lambda: list(DESK_SEEDS))
    max_iters: int = 3000
    grad_tol: float = 1e-8
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    output_dir: str = "out"

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(data)

    def validate(self):
        has_gen = self.rows is not None or self.cols is not None
        if self.target_path is not None and has_gen:
            raise InputError("give either target_path or rows/cols, not both")
        if self.alpha is not None and not self.alpha > 0:
            raise InputError("alpha must be positive")
        if self.lam is not None and self.alpha is not None:
            raise InputError("give either lambda or alpha, not both")
        return self

    def load_target(self):
        self.validate()
        if self.target_path is not None:
            try:
                return read_matrix_csv(self.target_path)
            except OSError as exc:
                raise InputError(f"cannot read target {self.target_path}: {exc}") from exc
        rows = 10 if self.rows is None else self.rows
        cols = 12 if self.cols is None else self.cols
        return gaussian_target(rows, cols, self.seed)

    def resolve_dims(self, shape):
        if self.dims is not None:
            return tuple(int(d) for d in self.dims)
        return (shape[1],) + (self.hidden,) * (self.depth - 1) + (shape[0],)

    def resolve_lambda(self, target):
        if self.lam is not None:
            return float(self.lam)
        alpha = 0.5 if self.alpha is None else self.alpha
        return alpha * collapse_level(target, self.depth)

    def grid(self, dims, master_seed=None):
        return make_grid(dims, self.step_sizes, self.init_scales, self.seeds,
                         self.max_iters, self.grad_tol,
                         master_seed=self.seed if master_seed is None else master_seed)


def gaussian_target(rows, cols, seed):
    return np.random.default_rng(seed).standard_normal((rows, cols))


def collapse_level(target, depth):
    """``lam`` above which the end-to-end minimizer of ``target`` is zero."""
    return collapse_lambda(float(np.linalg.norm(target, 2)), depth)


def sweep_collapse(target, depth, dims, alphas, grid_fn, max_workers=None):
    """One row per ``alpha``: best grid-search GD run versus the closed form at ``lam = alpha * tau``.

    ``grid_fn(dims)`` builds the hyperparameter grid used at every level.
    Rows are returned in ``alphas`` order.
    """
    tau = collapse_level(target, depth)
    rows = []
    for alpha in alphas:
        spec = ProblemSpec(target, depth, alpha * tau)
        sol = solve_closed_form(spec)
        best = gd_grid_search(spec, grid_fn(dims), max_workers=max_workers)
        rows.append({
            "alpha": float(alpha),
            "lambda": spec.lam,
            "gd_product_fro": float(np.linalg.norm(best.final_product)),
            "closedform_product_fro": float(np.linalg.norm(sol.m_star)),
            "best_objective": best.final_objective,
            "closedform_objective": sol.objective_value,
            "best_step_size": best.config.step_size,
            "best_init_scale": best.config.init_scale,
            "best_seed": best.config.seed,
        })
    return rows


SWEEP_COLUMNS = ("alpha", "lambda", "gd_product_fro", "closedform_product_fro", "best_objective",
                 "closedform_objective", "best_step_size", "best_init_scale", "best_seed")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def rows_to_csv(rows, columns):
    lines = [",".join(columns)]
    lines += [",".join(_fmt(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def write_sweep_svg(rows, path):
    """Plot the sweep as SVG. Returns False if matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    a = [r["alpha"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(a, [r["gd_product_fro"] for r in rows], "o", label="best GD run")
    ax.plot(a, [r["closedform_product_fro"] for r in rows], "-", label="closed form")
    ax.axvline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel(r"$\alpha$  ($\lambda = \alpha\tau$)")
    ax.set_ylabel(r"$\|W_L\cdots W_1\|_F$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return True


# -- verification suite ----------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


SIZE_CLASSES = {
    "small": dict(prox_samples=200, spectrum_cases=10, grad_cases=5, vn_pairs=2000,
                  vn_aligned=200, fiber_targets=20, fiber_samples=20, gd_targets=1, trace_cases=5),
    "full": dict(prox_samples=1000, spectrum_cases=50, grad_cases=20, vn_pairs=10_000,
                 vn_aligned=1000, fiber_targets=100, fiber_samples=50, gd_targets=3, trace_cases=10),
}


def random_orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def aligned_pair(rows, cols, rng):
    """Two matrices sharing random singular vectors, both with sorted spectra."""
    u = random_orthogonal(rows, rng)
    v = random_orthogonal(cols, rng)
    r = min(rows, cols)
    sa = np.sort(rng.uniform(0, 3, r))[::-1]
    sb = np.sort(rng.uniform(0, 3, r))[::-1]
    return (u[:, :r] * sa) @ v[:, :r].T, (u[:, :r] * sb) @ v[:, :r].T


def check_prox_oracle(rng, n):
    worst = 0.0
    for _ in range(n):
        m = rng.uniform(-10, 10)
        lam = rng.uniform(0, 10) or 1.0
        L = int(rng.integers(1, 9))
        worst = max(worst, abs(prox_scalar(m, lam, L).minimizer - prox_grid_oracle(m, lam, L)))
    return Check("prox vs grid oracle", worst <= 1e-5, f"max |diff| = {worst:.3e} over {n} cases")


def check_threshold_sharpness():
    ok, parts = True, []
    for lam, L in ((4.0, 3), (1.0, 5)):
        mb = threshold_m_bar(lam, L)
        below = prox_scalar(mb * (1 - 1e-6), lam, L).minimizer
        above = prox_scalar(mb * (1 + 1e-6), lam, L).minimizer
        good = below == 0.0 and above >= interior_local_min(lam, L) - 1e-6
        ok &= good
        parts.append(f"(lam={lam}, L={L}) below={below:.3g} above={above:.6g}")
    return Check("threshold sharpness", ok, "; ".join(parts))


def scalar_stack(w, signs):
    return FactorStack(tuple(np.array([[w * s]]) for s in signs))


def sign_patterns(depth, target_sign):
    """All sign vectors of length ``depth`` whose product equals ``target_sign``."""
    out = []
    for k in range(2 ** (depth - 1)):
        s = [1.0 if (k >> i) & 1 == 0 else -1.0 for i in range(depth - 1)]
        s.append(target_sign * float(np.prod(s)))
        out.append(s)
    return out


def scalar_fd_spectrum(m, lam, depth, signs=None):
    res = prox_scalar(m, lam, depth)
    w = abs(res.minimizer) ** (1.0 / depth)
    if signs is None:
        signs = sign_patterns(depth, np.sign(m) or 1.0)[0]
    spec = ProblemSpec([[m]], depth, lam)
    return np.linalg.eigvalsh(hessian_fd(spec, scalar_stack(w, signs)))


def interior_case(rng, depths=(3, 4, 5)):
    L = int(rng.choice(depths))
    lam = rng.uniform(0.1, 5.0)
    m = threshold_m_bar(lam, L) * rng.uniform(1.2, 3.0) * rng.choice([-1.0, 1.0])
    return m, lam, L


def check_spectrum(rng, n):
    worst_cf, worst_sign = 0.0, 0.0
    for _ in range(n):
        m, lam, L = interior_case(rng)
        cf = hessian_spectrum_scalar(m, lam, L).eigenvalues()
        spectra = [scalar_fd_spectrum(m, lam, L, s) for s in sign_patterns(L, np.sign(m))]
        worst_cf = max(worst_cf, float(np.max(np.abs(spectra[0] - cf) / np.abs(cf))))
        for sp in spectra[1:]:
            worst_sign = max(worst_sign, float(np.max(np.abs(sp - spectra[0]) / np.abs(spectra[0]))))
    ok = worst_cf <= 1e-3 and worst_sign <= 1e-6
    return Check("Hessian spectrum constancy", ok,
                 f"closed form vs FD {worst_cf:.2e}, across sign patterns {worst_sign:.2e}")


def check_spectrum_limit():
    spec = hessian_spectrum_scalar(2.0, 1e-8, 3)
    ref = 2 * 3 * 2.0 ** (2 * (1 - 1 / 3))
    err = abs(spec.lambda_max - ref) / ref
    return Check("vanishing-lambda top eigenvalue", err <= 1e-3, f"rel err {err:.2e}")


def random_stack(dims, rng, scale=1.0):
    return FactorStack(tuple(rng.standard_normal((dims[i], dims[i - 1])) * scale
                             for i in range(1, len(dims))))


def gradient_rel_error(analytic, fd):
    a = np.concatenate([g.ravel() for g in analytic])
    b = np.concatenate([g.ravel() for g in fd])
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def check_gradient(rng, n, gradient_fn=gradient):
    worst = 0.0
    for _ in range(n):
        L = int(rng.integers(1, 5))
        dims = tuple(int(d) for d in rng.integers(1, 5, L + 1))
        dims = (dims[0],) + tuple(max(d, min(dims[0], dims[-1])) for d in dims[1:-1]) + (dims[-1],)
        spec = ProblemSpec(rng.standard_normal((dims[-1], dims[0])), L, rng.uniform(0.1, 3))
        stack = random_stack(dims, rng, 0.7)
        worst = max(worst, gradient_rel_error(gradient_fn(stack, spec), finite_diff_gradient(spec, stack)))
    return Check("gradient vs central differences", worst <= 1e-5, f"max rel err {worst:.2e}")


def check_von_neumann(rng, pairs, aligned):
    lo = np.inf
    for _ in range(pairs):
        a, b = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
        scale = 1 + np.linalg.norm(a) * np.linalg.norm(b)
        lo = min(lo, von_neumann_gap(a, b) / scale)
    hi = 0.0
    for _ in range(aligned):
        a, b = aligned_pair(6, 4, rng)
        scale = 1 + np.linalg.norm(a) * np.linalg.norm(b)
        hi = max(hi, abs(von_neumann_gap(a, b)) / scale)
    ok = lo >= -1e-10 and hi <= 1e-10
    return Check("von Neumann trace gap", ok, f"min scaled gap {lo:.2e}; aligned max {hi:.2e}")


def check_variational(rng, targets, samples):
    worst_eq, margin = 0.0, np.inf
    for k in range(targets):
        rows, cols = (int(x) for x in rng.integers(1, 6, 2))
        L = int(rng.choice([2, 3, 4]))
        x = rng.standard_normal((rows, cols))
        dims = (cols,) + (max(rows, cols),) * (L - 1) + (rows,)
        sq = schatten_q(x, 2.0 / L)
        base, stacks = fiber_samples(x, L, dims, samples, seed=int(rng.integers(2**32)))
        worst_eq = max(worst_eq, abs(mean_sq_norm(base) - sq) / sq)
        best = min(mean_sq_norm(s) for s in stacks)
        margin = min(margin, (best - sq) / (1 + sq))
    ok = worst_eq <= 1e-10 and margin >= -1e-9
    return Check("variational form", ok,
                 f"balanced rel err {worst_eq:.2e}; min scaled excess of fiber samples {margin:.2e}")


def check_trace(rng, n):
    worst_fd, worst_bound = 0.0, np.inf
    for _ in range(n):
        rows, cols = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        L = int(rng.integers(2, 4))
        hid = max(rows, cols)
        dims = (cols,) + (hid,) * (L - 1) + (rows,)
        spec = ProblemSpec(rng.standard_normal((rows, cols)), L, rng.uniform(0.1, 2))
        stack = random_stack(dims, rng, 0.8)
        tr = hessian_trace_exact(stack, spec)
        fd = float(np.trace(hessian_fd(spec, stack)))
        worst_fd = max(worst_fd, abs(tr - fd) / abs(tr))
        sol = solve_closed_form(spec)
        bal = balanced_factors(sol.m_star, dims)
        g = layer_norm_constant(sol.m_star, L)
        worst_bound = min(worst_bound, hessian_trace_exact(bal, spec) - trace_lower_bound(sol.m_star, g, spec, dims))
    ok = worst_fd <= 1e-4 and worst_bound >= -1e-6
    return Check("Hessian trace", ok, f"exact vs FD rel {worst_fd:.2e}; min(trace - bound) {worst_bound:.3e}")


def check_gd_agreement(rng, n):
    worst = 0.0
    for _ in range(n):
        target = rng.standard_normal((5, 6))
        spec = ProblemSpec(target, 3, 0.5 * collapse_level(target, 3))
        sol = solve_closed_form(spec)
        dims = (6, 16, 16, 5)
        grid = make_grid(dims, DESK_STEP_SIZES, DESK_INIT_SCALES, (0,), 3000, master_seed=int(rng.integers(2**32)))
        best = gd_grid_search(spec, grid)
        worst = max(worst, float(np.linalg.norm(best.final_product - sol.m_star) / np.linalg.norm(sol.m_star)))
    return Check("GD agrees with closed form", worst <= 1e-2, f"max rel Frobenius distance {worst:.2e}")


def check_collapse(rng):
    target = rng.standard_normal((4, 5))
    spec = ProblemSpec(target, 3, collapse_level(target, 3) * (1 + 1e-6))
    sol = solve_closed_form(spec)
    return Check("collapse above threshold", bool(np.all(sol.m_star == 0)),
                 f"||M*||_F = {np.linalg.norm(sol.m_star):.3e}")


def run_verification(seed=0, size_class="small", gradient_fn=gradient):
    """Run every invariant check; returns a list of :class:`Check`."""
    if size_class not in SIZE_CLASSES:
        raise InputError(f"size class must be one of {sorted(SIZE_CLASSES)}")
    cfg = SIZE_CLASSES[size_class]
    rng = np.random.default_rng(seed)
    return [
        check_prox_oracle(rng, cfg["prox_samples"]),
        check_threshold_sharpness(),
        check_spectrum(rng, cfg["spectrum_cases"]),
        check_spectrum_limit(),
        check_gradient(rng, cfg["grad_cases"], gradient_fn),
        check_von_neumann(rng, cfg["vn_pairs"], cfg["vn_aligned"]),
        check_variational(rng, cfg["fiber_targets"], cfg["fiber_samples"]),
        check_trace(rng, cfg["trace_cases"]),
        check_collapse(rng),
        check_gd_agreement(rng, cfg["gd_targets"]),
    ]
