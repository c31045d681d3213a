"""Problem definitions, ordered SVD, Schatten quasi-norms and the trace gap."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InputError(ValueError):
    """Raised when arguments violate a documented precondition."""


class NumericalError(ArithmeticError):
    """Raised when a numerical routine fails to converge or breaks an invariant."""


class PreconditionError(InputError):
    """Raised when an input sits on a set where a closed form does not apply."""


@dataclass(frozen=True)
class Tolerances:
    root_tol: float = 1e-12
    tie_tol: float = 1e-9
    svd_tol: float = 1e-10
    rank_tol: float = 1e-12

    def __post_init__(self):
        for name in ("root_tol", "tie_tol", "svd_tol", "rank_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be strictly positive")


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class ProblemSpec:
    """Regularized deep factorization problem.

    Parameters
    ----------
    target : ndarray of shape (d_L, d_0)
        Matrix to be factorized.
    depth : int
        Number of factors ``L``.
    lam : float
        Weight-decay strength; each layer carries ``lam / L * ||W_i||_F^2``.
    """

    target: np.ndarray
    depth: int
    lam: float
    q: float = field(init=False)

    def __post_init__(self):
        target = np.array(self.target, dtype=float)
        if target.ndim == 1:
            target = target.reshape(1, -1)
        if target.ndim != 2:
            raise InputError("target must be a matrix")
        if not np.all(np.isfinite(target)):
            raise InputError("target has non-finite entries")
        if int(self.depth) != self.depth or self.depth < 1:
            raise InputError(f"depth must be an integer >= 1, got {self.depth}")
        if not self.lam > 0 or not np.isfinite(self.lam):
            raise InputError(f"lambda must be positive and finite, got {self.lam}")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "depth", int(self.depth))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "q", 2.0 / self.depth)

    @property
    def shape(self):
        return self.target.shape


@dataclass(frozen=True)
class OrderedSvd:
    """Full SVD ``m = u @ diag(sigma) @ v.T`` with non-increasing ``sigma``."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def rank_capacity(self):
        return self.sigma.shape[0]

    def reconstruct(self, sigma=None):
        """Rebuild ``u @ diag(sigma) @ v.T`` with zero padding off the r x r block."""
        s = self.sigma if sigma is None else np.asarray(sigma, dtype=float)
        r = self.rank_capacity
        return (self.u[:, :r] * s) @ self.v[:, :r].T


def _canonical_signs(u):
    # flip so the largest-magnitude entry of each column is positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def svd_ordered(m) -> OrderedSvd:
    """Full SVD with non-increasing singular values and canonical signs.

    Each singular pair is flipped so that the entry of largest magnitude in
    the left singular vector is positive; null-space columns are canonicalized
    the same way on their own.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InputError("svd_ordered expects a matrix")
    if not np.all(np.isfinite(m)):
        raise InputError("matrix has non-finite entries")
    rows, cols = m.shape
    r = min(rows, cols)
    if r == 0:
        return OrderedSvd(np.eye(rows), np.zeros(0), np.eye(cols))
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    v = vt.T.copy()
    u = u.copy()
    signs = _canonical_signs(u)
    u *= signs
    v[:, :r] *= signs[:r]
    if cols > r:
        v[:, r:] *= _canonical_signs(v[:, r:])
    for a in (u, s, v):
        a.setflags(write=False)
    return OrderedSvd(u, s, v)


def numerical_rank_mask(sigma, rank_tol=DEFAULT_TOL.rank_tol):
    """Boolean mask of singular values above ``rank_tol * sigma_1``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0 or sigma[0] <= 0:
        return np.zeros(sigma.shape, dtype=bool)
    return sigma > rank_tol * sigma[0]


def schatten_q(m, q: float, rank_tol: float = DEFAULT_TOL.rank_tol) -> float:
    """Return ``sum_i sigma_i(m) ** q`` (the q-th power of the Schatten quasi-norm).

    Singular values at or below ``rank_tol * sigma_1`` count as zero, so that
    rounding noise in a rank-deficient matrix does not leak in through small q.
    """
    if not 0 < q <= 2:
        raise InputError(f"q must lie in (0, 2], got {q}")
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    s = s[numerical_rank_mask(s, rank_tol)]
    return float(np.sum(s**q))


def von_neumann_gap(a, b) -> float:
    """``sum_i sigma_i(a) sigma_i(b) - tr(a @ b.T)``; non-negative up to rounding."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    sa = np.linalg.svd(a, compute_uv=False)
    sb = np.linalg.svd(b, compute_uv=False)
    return float(np.dot(sa, sb) - np.sum(a * b))


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless CSV file, one matrix row per line."""
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for line in csv.reader(fh):
            if not line or all(not c.strip() for c in line):
                continue
            try:
                rows.append([float(c) for c in line])
            except ValueError as exc:
                raise InputError(f"{path}: non-numeric entry ({exc})") from exc
    if not rows:
        raise InputError(f"{path}: empty matrix file")
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: ragged rows")
    m = np.array(rows, dtype=float)
    if not np.all(np.isfinite(m)):
        raise InputError(f"{path}: non-finite entries")
    return m


def write_matrix_csv(path, m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    Path(path).write_text("".join(",".join(f"{x:.17g}" for x in row) + "\n" for row in m))
