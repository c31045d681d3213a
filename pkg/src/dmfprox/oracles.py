"""Brute-force references used to validate the closed forms.

Nothing here reuses the solver code paths it checks: the prox oracle is an
exhaustive grid search, the gradient oracle is plain central differences and
the fiber oracle samples the product-preserving gauge orbit at random.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, ProblemSpec
from .matrix import FactorStack, balanced_factors, check_dims
from .training import objective

MAX_GAUGE_COND = 10.0


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    coarse_steps: int = 100_000
    refine_rounds: int = 3
    refine_factor: int = 100

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InputError("grid needs lo < hi")
        if self.coarse_steps < 1000:
            raise InputError("coarse_steps must be >= 1000")

    @property
    def resolution(self):
        return (self.hi - self.lo) / (self.coarse_steps * self.refine_factor**self.refine_rounds)


def prox_grid_oracle(m: float, lam: float, depth: int, grid: GridSpec | None = None) -> float:
    """Argmin of ``(m - rho)^2 + lam |rho|^(2/depth)`` by refined grid search.

    The default grid is symmetric, ``[-(|m| + 1), |m| + 1]``, with an even
    number of intervals so that ``rho = 0`` is a grid point.
    """
    if grid is None:
        r = abs(m) + 1.0
        grid = GridSpec(-r, r)
    q = 2.0 / depth

    def phi(rho):
        return (m - rho) ** 2 + lam * np.abs(rho) ** q

    def argmin_on(lo, hi, n):
        xs = np.linspace(lo, hi, n + 1)
        # linspace rounding can miss 0 by an ulp; the origin must be exact
        xs[np.abs(xs) <= 0.25 * (hi - lo) / n] = 0.0
        return xs[np.argmin(phi(xs))]

    n = grid.coarse_steps + (grid.coarse_steps % 2)
    h = (grid.hi - grid.lo) / n
    best = argmin_on(grid.lo, grid.hi, n)
    for _ in range(grid.refine_rounds):
        best = argmin_on(best - h, best + h, 2 * grid.refine_factor)
        h = h / grid.refine_factor
    return float(best)


def random_gauge(dim, rng, max_cond=MAX_GAUGE_COND, max_tries=10_000):
    """``I + 0.5 * Gaussian`` resampled until its condition number is at most ``max_cond``."""
    for _ in range(max_tries):
        g = np.eye(dim) + 0.5 * rng.standard_normal((dim, dim))
        if np.linalg.cond(g) <= max_cond:
            return g
    raise RuntimeError(f"no gauge matrix with condition <= {max_cond} after {max_tries} draws")


def fiber_samples(x, depth: int, dims, samples: int, seed: int):
    """Random stacks with product ``x``, obtained by gauging the balanced stack.

    Each sample applies ``W_i <- G_i W_i`` and ``W_{i+1} <- W_{i+1} G_i^{-1}``
    for every hidden layer ``i``.
    """
    x = np.asarray(x, dtype=float)
    dims = check_dims(dims, x.shape, depth)
    if samples < 1:
        raise InputError("samples must be >= 1")
    base = balanced_factors(x, dims)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(samples):
        layers = [w.copy() for w in base.layers]
        for i in range(depth - 1):
            g = random_gauge(dims[i + 1], rng)
            layers[i] = g @ layers[i]
            layers[i + 1] = np.linalg.solve(g.T, layers[i + 1].T).T
        out.append(FactorStack(tuple(layers)))
    return base, out


def mean_sq_norm(stack: FactorStack) -> float:
    return float(np.mean([np.sum(w * w) for w in stack.layers]))


def fiber_sample_oracle(x, depth: int, dims, samples: int, seed: int) -> float:
    """Smallest ``(1/L) sum_i ||W_i||_F^2`` over the balanced stack and random fiber samples."""
    base, stacks = fiber_samples(x, depth, dims, samples, seed)
    return min([mean_sq_norm(base)] + [mean_sq_norm(s) for s in stacks])


def finite_diff_gradient(spec: ProblemSpec, stack: FactorStack, step: float = 1e-6):
    """Central-difference gradient of the factored objective, coordinate by coordinate."""
    dims = stack.dims
    x0 = stack.flatten()
    g = np.empty_like(x0)
    for i in range(x0.size):
        h = step * (1.0 + abs(x0[i]))
        x = x0.copy()
        x[i] += h
        fp = objective(FactorStack.from_flat(x, dims), spec)
        x[i] -= 2 * h
        fm = objective(FactorStack.from_flat(x, dims), spec)
        g[i] = (fp - fm) / (2 * h)
    return list(FactorStack.from_flat(g, dims).layers)
