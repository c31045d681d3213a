"""Closed-form end-to-end minimizer of l2-regularized deep matrix factorization.

The minimizer keeps the target's singular vectors and shrinks each singular
value with :func:`dmfprox.scalar.prox_scalar`. A balanced factor stack then
realizes it as a product of ``L`` layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_TOL,
    InputError,
    NumericalError,
    OrderedSvd,
    ProblemSpec,
    Tolerances,
    numerical_rank_mask,
    schatten_q,
    svd_ordered,
)
from .scalar import Branch, ProxResult, prox_scalar, threshold_m_bar


@dataclass(frozen=True)
class FactorStack:
    """Layers ``W_1, ..., W_L`` with ``W_i`` of shape ``(d_i, d_{i-1})``."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(np.array(w, dtype=float, ndmin=2) for w in self.layers)
        if not layers:
            raise InputError("a factor stack needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].shape[1] != layers[i - 1].shape[0]:
                raise InputError(
                    f"layer {i + 1} has shape {layers[i].shape}, cannot follow {layers[i - 1].shape}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def dims(self):
        return (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    @property
    def n_params(self):
        return sum(w.size for w in self.layers)

    def product(self):
        p = self.layers[0]
        for w in self.layers[1:]:
            p = w @ p
        return p

    def frobenius_norms(self):
        return np.array([np.linalg.norm(w) for w in self.layers])

    def flatten(self):
        return np.concatenate([w.ravel() for w in self.layers])

    @classmethod
    def from_flat(cls, vec, dims):
        vec = np.asarray(vec, dtype=float)
        layers, k = [], 0
        for i in range(1, len(dims)):
            n = dims[i] * dims[i - 1]
            layers.append(vec[k : k + n].reshape(dims[i], dims[i - 1]))
            k += n
        if k != vec.size:
            raise InputError(f"vector of length {vec.size} does not match dims {tuple(dims)}")
        return cls(tuple(layers))


def n_params(dims):
    return int(sum(dims[i] * dims[i - 1] for i in range(1, len(dims))))


def check_dims(dims, shape, depth=None):
    """Validate ``dims = (d_0, ..., d_L)`` against a ``(d_L, d_0)`` target."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or min(dims) < 1:
        raise InputError(f"invalid dims {dims}")
    if depth is not None and len(dims) != depth + 1:
        raise InputError(f"dims {dims} describe {len(dims) - 1} layers, expected {depth}")
    if (dims[-1], dims[0]) != tuple(shape):
        raise InputError(f"dims {dims} do not match target shape {tuple(shape)}")
    if min(dims) < min(dims[0], dims[-1]):
        raise InputError(f"dims {dims} cannot factorize every {shape[0]}x{shape[1]} matrix")
    return dims


@dataclass(frozen=True)
class MatrixSolution:
    m_star: np.ndarray
    svd: OrderedSvd
    prox_results: tuple
    unique: bool
    on_measure_zero_set: bool
    offending_indices: tuple
    objective_value: float
    warnings: tuple = field(default=())

    @property
    def sigma_star(self):
        return np.array([abs(p.minimizer) for p in self.prox_results])

    def to_dict(self):
        return {
            "sigma_target": [float(s) for s in self.svd.sigma],
            "sigma_star": [float(s) for s in self.sigma_star],
            "unique": self.unique,
            "on_measure_zero_set": self.on_measure_zero_set,
            "offending_indices": list(self.offending_indices),
            "objective": self.objective_value,
            "warnings": list(self.warnings),
        }


def objective_end2end(m, spec: ProblemSpec, rank_tol: float = DEFAULT_TOL.rank_tol) -> float:
    """``||target - m||_F^2 + lam * sum_i sigma_i(m)^(2/L)``."""
    m = np.asarray(m, dtype=float)
    if m.shape != spec.shape:
        raise InputError(f"shape {m.shape} does not match target {spec.shape}")
    return float(np.sum((spec.target - m) ** 2) + spec.lam * schatten_q(m, spec.q, rank_tol))


def is_on_measure_zero_set(spec: ProblemSpec, eps: float = DEFAULT_TOL.tie_tol):
    """Whether some singular value of the target sits at the critical magnitude.

    Returns ``(hit, indices)`` with 0-based indices into the non-increasing
    singular values. Always ``(False, ())`` for ``L <= 2``.
    """
    if spec.depth < 3:
        return False, ()
    m_bar = threshold_m_bar(spec.lam, spec.depth)
    sigma = np.linalg.svd(spec.target, compute_uv=False)
    idx = tuple(int(i) for i in np.flatnonzero(np.abs(sigma - m_bar) <= eps * m_bar))
    return bool(idx), idx


def strict_saddle_level(sigma_i: float, depth: int) -> float:
    """Right-hand side of the strict-saddle condition for one singular value.

    Every critical point is a local minimizer or a strict saddle when
    ``lam^L`` differs from this value for all singular values of the target.
    """
    L = depth
    a = ((L - 2) / L) ** (L / (2 * (L - 1)))
    b = (L / (L - 2)) ** ((L - 2) / (2 * (L - 1)))
    return sigma_i * L**L * (a + b) ** (-2 * (L - 1))


def _strict_saddle_warnings(spec, sigma, rel=1e-9):
    if spec.depth < 3:
        return ()
    out = []
    lam_pow = spec.lam**spec.depth
    for i, s in enumerate(sigma):
        level = strict_saddle_level(s, spec.depth)
        if abs(lam_pow - level) <= rel * max(abs(level), abs(lam_pow)):
            out.append(f"lambda^L matches the strict-saddle level of singular value {i}; "
                       "non-strict saddles may exist")
    return tuple(out)


def solve_closed_form(spec: ProblemSpec, tol: Tolerances = DEFAULT_TOL) -> MatrixSolution:
    """Unique end-to-end minimizer of ``||target - M||_F^2 + lam ||M||_{S^(2/L)}^(2/L)``.

    Each singular value of the target goes through the scalar prox; singular
    vectors are kept. If some singular value hits the critical magnitude the
    canonical (nonzero) tie choice is used and ``unique`` is False.
    """
    svd = svd_ordered(spec.target)
    sigma = np.where(numerical_rank_mask(svd.sigma, tol.rank_tol), svd.sigma, 0.0)
    results = tuple(prox_scalar(s, spec.lam, spec.depth, tol) for s in sigma)
    x = np.array([r.minimizer for r in results])
    if np.any(np.diff(x) > 1e-9 * (1.0 + (x[0] if x.size else 0.0))):
        raise NumericalError(f"shrunk singular values are not non-increasing: {x}")
    m_star = svd.reconstruct(x)
    m_star.setflags(write=False)
    unique = all(r.unique for r in results)
    offending = tuple(i for i, r in enumerate(results) if r.branch is Branch.TIE)
    return MatrixSolution(
        m_star=m_star,
        svd=svd,
        prox_results=results,
        unique=unique,
        on_measure_zero_set=not unique,
        offending_indices=offending,
        objective_value=objective_end2end(m_star, spec, tol.rank_tol),
        warnings=_strict_saddle_warnings(spec, svd.sigma),
    )


def balanced_factors(m_star, dims, rank_tol: float = DEFAULT_TOL.rank_tol) -> FactorStack:
    """Balanced stack whose product is ``m_star``.

    With ``m_star = U diag(s) V^T`` the outer layers are ``U diag(s^(1/L))``
    and ``diag(s^(1/L)) V^T``, the middle layers ``diag(s^(1/L))``, every block
    embedded top-left in a zero matrix of the layer's shape.
    """
    m_star = np.asarray(m_star, dtype=float)
    dims = check_dims(dims, m_star.shape)
    L = len(dims) - 1
    if L == 1:
        return FactorStack((m_star.copy(),))
    svd = svd_ordered(m_star)
    r = svd.rank_capacity
    s = np.where(numerical_rank_mask(svd.sigma, rank_tol), svd.sigma, 0.0)
    root = s ** (1.0 / L)
    layers = []
    for i in range(1, L + 1):
        w = np.zeros((dims[i], dims[i - 1]))
        if i == 1:
            w[:r, :] = root[:, None] * svd.v[:, :r].T
        elif i == L:
            w[:, :r] = svd.u[:, :r] * root
        else:
            w[:r, :r] = np.diag(root)
        layers.append(w)
    return FactorStack(tuple(layers))


def layer_norm_constant(m_star, depth: int, rank_tol: float = DEFAULT_TOL.rank_tol) -> float:
    """Frobenius norm shared by every layer of every minimizer: ``sqrt(||M*||_{S^q}^q)``."""
    return float(np.sqrt(schatten_q(m_star, 2.0 / depth, rank_tol)))


def trace_lower_bound(m_star, g_star: float, spec: ProblemSpec, dims) -> float:
    """Lower bound ``2 L ||P*||_F^2 / g*^2 + (2 lam / L) N`` on the Hessian trace at a minimizer."""
    N = n_params(dims)
    base = 2.0 * spec.lam / spec.depth * N
    p2 = float(np.sum(np.asarray(m_star, dtype=float) ** 2))
    if g_star <= 0 or p2 == 0:
        return base
    return 2.0 * spec.depth * p2 / g_star**2 + base
