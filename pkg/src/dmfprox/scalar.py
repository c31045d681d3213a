"""Exact prox of ``rho -> (m - rho)^2 + lam |rho|^(2/L)`` and the depth-L Hessian spectrum.

For ``L >= 3`` the penalty is a concave power, so the prox is discontinuous:
below a critical magnitude ``m_bar(lam, L)`` the minimizer is exactly zero,
above it the minimizer is the larger stationary point of the objective, and
at ``|m| = m_bar`` both candidates attain the minimum.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_TOL, InputError, NumericalError, PreconditionError, Tolerances

MAX_ROOT_ITERS = 200
NEWTON_POLISH_STEPS = 5


class Branch(str, enum.Enum):
    ZERO = "Zero"
    INTERIOR = "Interior"
    TIE = "Tie"
    CONVEX = "ConvexClosedForm"


@dataclass(frozen=True)
class ProxResult:
    """Outcome of a scalar prox solve.

    ``minimizer`` is the canonical choice; at a tie it is the nonzero
    candidate and ``unique`` is False.
    """

    minimizer: float
    candidates: tuple
    branch: Branch
    unique: bool
    threshold_m_bar: float

    def to_dict(self):
        return {
            "minimizer": self.minimizer,
            "candidates": list(self.candidates),
            "branch": self.branch.value,
            "unique": self.unique,
            "threshold_m_bar": self.threshold_m_bar,
        }


@dataclass(frozen=True)
class ScalarSpectrum:
    """Closed-form Hessian eigenvalues of the scalar chain at a global minimizer."""

    depth: int
    bulk_eig: float
    top_eig: float
    lambda_max: float
    layer_magnitude: float

    def eigenvalues(self):
        """All ``L`` eigenvalues, sorted ascending."""
        return np.sort(np.array([self.bulk_eig] * (self.depth - 1) + [self.top_eig]))


def _check_depth(depth, minimum):
    if int(depth) != depth or depth < minimum:
        raise InputError(f"depth must be an integer >= {minimum}, got {depth}")
    return int(depth)


def _threshold_constant(q):
    # m_bar = c(q) * lam^(1/(2-q))
    return (1.0 - q / 2.0) * (1.0 - q) ** ((q - 1.0) / (2.0 - q))


def threshold_m_bar(lam: float, depth: int) -> float:
    """Critical magnitude below which the prox returns zero (``depth >= 3``).

    >>> round(threshold_m_bar(4.0, 3), 4)
    2.4816
    """
    depth = _check_depth(depth, 3)
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    q = 2.0 / depth
    return _threshold_constant(q) * lam ** (1.0 / (2.0 - q))


def collapse_lambda(magnitude: float, depth: int) -> float:
    """Smallest ``lam`` whose critical magnitude equals ``magnitude``.

    Inverse of :func:`threshold_m_bar` in its first argument. For a matrix,
    passing the largest singular value gives the level above which the whole
    end-to-end minimizer is zero.
    """
    depth = _check_depth(depth, 3)
    if magnitude < 0:
        raise InputError(f"magnitude must be non-negative, got {magnitude}")
    q = 2.0 / depth
    return (magnitude / _threshold_constant(q)) ** (2.0 - q)


def interior_local_min(lam: float, depth: int) -> float:
    """Nonzero candidate ``(lam (1-q))^(1/(2-q))`` at the tie ``|m| = m_bar``."""
    q = 2.0 / depth
    return (lam * (1.0 - q)) ** (1.0 / (2.0 - q))


def _dphi(rho, mag, lam, q):
    return 2.0 * (rho - mag) + lam * q * rho ** (q - 1.0)


def _d2phi(rho, lam, q):
    return 2.0 + lam * q * (q - 1.0) * rho ** (q - 2.0)


def stationary_root(mag: float, lam: float, q: float, tol: Tolerances = DEFAULT_TOL):
    """Larger root of ``phi'(rho) = 2 (rho - mag) + lam q rho^(q-1)`` on ``rho > 0``.

    ``phi'`` is strictly convex on ``(0, inf)`` with its minimum at the
    inflection point ``rho_c = (lam q (1-q) / 2)^(1/(2-q))``. If
    ``phi'(rho_c) > 0`` there is no stationary point and None is returned.
    Otherwise the root on ``[rho_c, mag]`` is found by bisection and then
    polished with a few Newton steps.
    """
    if not mag > 0:
        raise InputError(f"mag must be positive, got {mag}")
    if not 0 < q < 1:
        raise InputError(f"q must lie in (0, 1), got {q}")
    rho_c = (lam * q * (1.0 - q) / 2.0) ** (1.0 / (2.0 - q))
    if _dphi(rho_c, mag, lam, q) > 0:
        return None

    lo, hi = rho_c, mag
    f_hi = _dphi(hi, mag, lam, q)
    expansions = 0
    while f_hi < 0:
        # phi'(mag) = lam q mag^(q-1) > 0 in exact arithmetic; guard rounding
        hi *= 2.0
        f_hi = _dphi(hi, mag, lam, q)
        expansions += 1
        if expansions > 60:
            raise NumericalError("could not bracket stationary root")

    width = tol.root_tol * max(1.0, mag)
    for _ in range(MAX_ROOT_ITERS):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _dphi(mid, mag, lam, q) > 0:
            hi = mid
        else:
            lo = mid
    else:
        raise NumericalError(f"bisection did not converge in {MAX_ROOT_ITERS} iterations")

    root = 0.5 * (lo + hi)
    best = abs(_dphi(root, mag, lam, q))
    for _ in range(NEWTON_POLISH_STEPS):
        curv = _d2phi(root, lam, q)
        if curv <= 0:
            break
        cand = root - _dphi(root, mag, lam, q) / curv
        if not lo <= cand <= hi:
            break
        res = abs(_dphi(cand, mag, lam, q))
        if res >= best:
            break
        root, best = cand, res
    return root


def prox_scalar(m: float, lam: float, depth: int, tol: Tolerances = DEFAULT_TOL) -> ProxResult:
    """Global minimizer of ``(m - rho)^2 + lam |rho|^(2/depth)``.

    Parameters
    ----------
    m : float
        Scalar to shrink.
    lam : float
        Penalty weight, strictly positive.
    depth : int
        Factorization depth ``L >= 1``; the penalty exponent is ``2 / L``.
    tol : Tolerances
        ``tie_tol`` sets the relative band around the critical magnitude that
        is reported as a tie.

    Returns
    -------
    ProxResult
    """
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    depth = _check_depth(depth, 1)
    m = float(m)
    if not math.isfinite(m):
        raise InputError("m must be finite")
    sign = float(np.sign(m))
    mag = abs(m)

    if depth == 1:
        rho = m / (1.0 + lam)
        return ProxResult(rho, (rho,), Branch.CONVEX, True, 0.0)
    if depth == 2:
        rho = sign * max(mag - lam / 2.0, 0.0)
        return ProxResult(rho, (rho,), Branch.CONVEX, True, lam / 2.0)

    q = 2.0 / depth
    m_bar = threshold_m_bar(lam, depth)
    if mag < m_bar * (1.0 - tol.tie_tol):
        return ProxResult(0.0, (0.0,), Branch.ZERO, True, m_bar)
    if mag > m_bar * (1.0 + tol.tie_tol):
        root = stationary_root(mag, lam, q, tol)
        if root is None:
            raise NumericalError(f"no stationary point above the threshold (m={m}, lam={lam}, L={depth})")
        rho = sign * root
        return ProxResult(rho, (rho,), Branch.INTERIOR, True, m_bar)
    rho = sign * interior_local_min(lam, depth)
    return ProxResult(rho, (0.0, rho), Branch.TIE, False, m_bar)


def hessian_spectrum_scalar(m: float, lam: float, depth: int, tol: Tolerances = DEFAULT_TOL) -> ScalarSpectrum:
    """Hessian eigenvalues of the depth-L scalar objective at any global minimizer.

    On the interior branch the spectrum is ``4 lam / L`` with multiplicity
    ``L - 1`` plus ``2 L w^(2L-2) + 4 lam / L - 2 lam`` where ``w`` is the
    common layer magnitude. At the all-zero minimizer the Hessian is
    ``(2 lam / L) I``.
    """
    depth = _check_depth(depth, 3)
    res = prox_scalar(m, lam, depth, tol)
    if res.branch is Branch.TIE:
        raise PreconditionError(
            f"|m| = {abs(m)!r} equals the critical magnitude {res.threshold_m_bar!r}; "
            "the minimizer set is not a single end-to-end value there"
        )
    if res.branch is Branch.ZERO:
        e = 2.0 * lam / depth
        return ScalarSpectrum(depth, e, e, e, 0.0)
    w = abs(res.minimizer) ** (1.0 / depth)
    bulk = 4.0 * lam / depth
    curv = 2.0 * depth * w ** (2 * depth - 2)
    top = curv + bulk - 2.0 * lam
    return ScalarSpectrum(depth, bulk, top, max(curv - 2.0 * lam, 0.0) + bulk, w)
