"""Factored objective, gradient descent and Hessian diagnostics."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import InputError, ProblemSpec
from .matrix import FactorStack, check_dims

DIVERGENCE_FACTOR = 1e3
MAX_FD_PARAMS = 400

DEFAULT_STEP_SIZES = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2)
DEFAULT_INIT_SCALES = (1e-2, 1e-1, 1.0)
DEFAULT_SEEDS = tuple(range(20))


@dataclass(frozen=True)
class GdConfig:
    step_size: float
    dims: tuple
    init_scale: float = 1.0
    seed: int = 0
    max_iters: int = 5000
    grad_tol: float = 1e-8

    def __post_init__(self):
        if not self.step_size > 0:
            raise InputError("step_size must be positive")
        if not self.init_scale > 0:
            raise InputError("init_scale must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def to_dict(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d


@dataclass
class TrainTrace:
    objective_history: np.ndarray
    product_fro_history: np.ndarray
    final_stack: FactorStack
    final_grad_norm: float
    converged: bool
    config: GdConfig
    diverged: bool = False
    n_iters: int = field(default=0)

    @property
    def final_objective(self):
        return float(self.objective_history[-1])

    @property
    def final_product(self):
        return self.final_stack.product()

    def to_dict(self, include_layers=False):
        out = {
            "config": self.config.to_dict(),
            "final_objective": self.final_objective,
            "final_product_fro": float(self.product_fro_history[-1]),
            "final_grad_norm": self.final_grad_norm,
            "converged": self.converged,
            "diverged": self.diverged,
            "n_iters": self.n_iters,
            "objective_history": [float(v) for v in self.objective_history],
            "product_fro_history": [float(v) for v in self.product_fro_history],
        }
        if include_layers:
            out["layers"] = [w.tolist() for w in self.final_stack.layers]
        return out

    def history_csv(self):
        lines = ["iter,objective,product_fro"]
        for i, (o, p) in enumerate(zip(self.objective_history, self.product_fro_history)):
            lines.append(f"{i},{o:.17g},{p:.17g}")
        return "\n".join(lines) + "\n"


def _check_stack(stack: FactorStack, spec: ProblemSpec):
    if stack.depth != spec.depth:
        raise InputError(f"stack has {stack.depth} layers, problem depth is {spec.depth}")
    if (stack.dims[-1], stack.dims[0]) != spec.shape:
        raise InputError(f"stack maps to {stack.dims[-1]}x{stack.dims[0]}, target is {spec.shape}")


def objective(stack: FactorStack, spec: ProblemSpec) -> float:
    """``||target - W_L ... W_1||_F^2 + (lam / L) sum_i ||W_i||_F^2``."""
    _check_stack(stack, spec)
    resid = spec.target - stack.product()
    penalty = sum(float(np.sum(w * w)) for w in stack.layers)
    return float(np.sum(resid * resid) + spec.lam / spec.depth * penalty)


def _prefix_products(layers):
    # below[k] = W_k ... W_1 (below[0] = None means identity)
    below = [None]
    for w in layers:
        below.append(w if below[-1] is None else w @ below[-1])
    # above[k] = W_L ... W_{k+1} (above[L] = None means identity)
    above = [None]
    for w in reversed(layers):
        above.append(w if above[-1] is None else above[-1] @ w)
    above.reverse()
    return below, above


def _gradient_layers(layers, target, lam):
    L = len(layers)
    below, above = _prefix_products(layers)
    resid = below[L] - target
    grads = []
    for k in range(L):
        A, B = above[k + 1], below[k]
        g = resid if A is None else A.T @ resid
        if B is not None:
            g = g @ B.T
        grads.append(2.0 * g + (2.0 * lam / L) * layers[k])
    return grads, resid


def gradient(stack: FactorStack, spec: ProblemSpec):
    """Per-layer gradient ``2 A_k^T (A_k W_k B_k - target) B_k^T + (2 lam / L) W_k``.

    ``A_k = W_L ... W_{k+1}`` and ``B_k = W_{k-1} ... W_1``. Returns a list of
    arrays shaped like the layers.
    """
    _check_stack(stack, spec)
    grads, _ = _gradient_layers(stack.layers, spec.target, spec.lam)
    return grads


def grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def init_stack(dims, init_scale, seed):
    rng = np.random.default_rng(seed)
    return FactorStack(tuple(
        rng.standard_normal((dims[i], dims[i - 1])) * (init_scale / np.sqrt(dims[i - 1]))
        for i in range(1, len(dims))
    ))


def gd_run(spec: ProblemSpec, config: GdConfig, gradient_fn=None) -> TrainTrace:
    """Full-batch gradient descent from a scaled Gaussian initialization.

    Evaluates at most ``max_iters`` iterates (the initial point counts as the
    first) and stops early once the gradient norm drops to ``grad_tol``. A run
    whose objective exceeds ``1e3`` times its initial value (or turns
    non-finite) stops early as diverged. ``final_stack`` is the last evaluated
    iterate, so it matches the last history entry.
    """
    dims = check_dims(config.dims, spec.shape, spec.depth)
    stack = init_stack(dims, config.init_scale, config.seed)
    layers = list(stack.layers)
    target, lam, L = spec.target, spec.lam, spec.depth
    coef = lam / L

    def loss_of(resid, ws):
        return float(np.sum(resid * resid) + coef * sum(float(np.sum(w * w)) for w in ws))

    obj_hist, fro_hist = [], []
    diverged = False
    gnorm = np.inf
    n_iters = 0
    limit = None
    for it in range(config.max_iters):
        if gradient_fn is None:
            grads, resid = _gradient_layers(layers, target, lam)
        else:
            cur = FactorStack(tuple(layers))
            grads = gradient_fn(cur, spec)
            resid = cur.product() - target
        f = loss_of(resid, layers)
        if limit is None:
            limit = DIVERGENCE_FACTOR * max(f, 1e-300)
        obj_hist.append(f)
        fro_hist.append(float(np.linalg.norm(resid + target)))
        if not np.isfinite(f) or f > limit:
            diverged = True
            break
        gnorm = grad_norm(grads)
        if gnorm <= config.grad_tol or it == config.max_iters - 1:
            break
        layers = [w - config.step_size * g for w, g in zip(layers, grads)]
        n_iters += 1

    return TrainTrace(
        objective_history=np.array(obj_hist),
        product_fro_history=np.array(fro_hist),
        final_stack=FactorStack(tuple(layers)),
        final_grad_norm=float(gnorm),
        converged=(not diverged) and gnorm <= config.grad_tol,
        config=config,
        diverged=diverged,
        n_iters=n_iters,
    )


def make_grid(dims, step_sizes=DEFAULT_STEP_SIZES, init_scales=DEFAULT_INIT_SCALES,
              seeds=DEFAULT_SEEDS, max_iters=5000, grad_tol=1e-8, master_seed=0):
    """Cartesian hyperparameter grid.

    Each run's RNG seed is derived from ``(master_seed, seed)`` through
    :class:`numpy.random.SeedSequence`, so it does not depend on grid order.
    """
    grid = []
    for eta, scale, s in itertools.product(step_sizes, init_scales, seeds):
        run_seed = int(np.random.SeedSequence([master_seed, s]).generate_state(1, np.uint64)[0])
        grid.append(GdConfig(step_size=eta, dims=dims, init_scale=scale, seed=run_seed,
                             max_iters=max_iters, grad_tol=grad_tol))
    return grid


def _selection_key(trace: TrainTrace):
    f = trace.final_objective
    if trace.diverged or not np.isfinite(f):
        f = np.inf
    c = trace.config
    return (f, c.step_size, c.init_scale, c.seed)


def gd_grid_search(spec: ProblemSpec, grid, max_workers=None, return_all=False):
    """Run every config and keep the trace with the lowest final objective.

    Ties are broken by ``(step_size, init_scale, seed)`` so the result does
    not depend on grid order. ``max_workers > 1`` runs configs in separate
    processes.
    """
    grid = list(grid)
    if not grid:
        raise InputError("empty hyperparameter grid")
    if max_workers and max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            traces = list(pool.map(gd_run, [spec] * len(grid), grid))
    else:
        traces = [gd_run(spec, c) for c in grid]
    best = min(traces, key=_selection_key)
    return (best, traces) if return_all else best


def hessian_trace_exact(stack: FactorStack, spec: ProblemSpec) -> float:
    """Exact Hessian trace ``(2 lam / L) N + sum_i 2 ||B_i||_F^2 ||A_i||_F^2``.

    Empty products are identities, contributing ``d_L`` (top) or ``d_0``
    (bottom) to the squared norms.
    """
    _check_stack(stack, spec)
    layers = stack.layers
    L = len(layers)
    dims = stack.dims
    below, above = _prefix_products(layers)
    total = 2.0 * spec.lam / L * stack.n_params
    for k in range(L):
        a2 = dims[-1] if above[k + 1] is None else float(np.sum(above[k + 1] ** 2))
        b2 = dims[0] if below[k] is None else float(np.sum(below[k] ** 2))
        total += 2.0 * a2 * b2
    return float(total)


def hessian_fd(spec: ProblemSpec, stack: FactorStack, step: float = 1e-4) -> np.ndarray:
    """Central second-difference Hessian of :func:`objective` over the flat parameters.

    Coordinate ``j`` uses ``h_j = step * (1 + |w_j|)``.
    """
    _check_stack(stack, spec)
    dims = stack.dims
    N = stack.n_params
    if N > MAX_FD_PARAMS:
        raise InputError(f"{N} parameters exceed the finite-difference limit of {MAX_FD_PARAMS}")
    x0 = stack.flatten()
    h = step * (1.0 + np.abs(x0))

    def f(x):
        return objective(FactorStack.from_flat(x, dims), spec)

    f0 = f(x0)
    plus = np.empty(N)
    minus = np.empty(N)
    for i in range(N):
        e = np.zeros(N)
        e[i] = h[i]
        plus[i] = f(x0 + e)
        minus[i] = f(x0 - e)
    H = np.empty((N, N))
    for i in range(N):
        H[i, i] = (plus[i] - 2.0 * f0 + minus[i]) / h[i] ** 2
        for j in range(i + 1, N):
            x = x0.copy()
            x[i] += h[i]; x[j] += h[j]
            fpp = f(x)
            x[j] -= 2 * h[j]
            fpm = f(x)
            x[i] -= 2 * h[i]
            fmm = f(x)
            x[j] += 2 * h[j]
            fmp = f(x)
            H[i, j] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    H = np.triu(H) + np.triu(H, 1).T
    return 0.5 * (H + H.T)


def balance_gap(stack: FactorStack) -> float:
    """``max_i ||W_{i+1}^T W_{i+1} - W_i W_i^T||_F / (1 + ||W_i W_i^T||_F)``."""
    if stack.depth < 2:
        raise InputError("balance is defined for two or more layers")
    gap = 0.0
    for lo, hi in zip(stack.layers[:-1], stack.layers[1:]):
        inner = lo @ lo.T
        gap = max(gap, np.linalg.norm(hi.T @ hi - inner) / (1.0 + np.linalg.norm(inner)))
    return float(gap)
