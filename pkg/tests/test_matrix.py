import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmfprox.core import InputError, ProblemSpec, schatten_q
from dmfprox.experiments import collapse_level, random_orthogonal
from dmfprox.matrix import (
    FactorStack,
    balanced_factors,
    check_dims,
    is_on_measure_zero_set,
    layer_norm_constant,
    n_params,
    objective_end2end,
    solve_closed_form,
    strict_saddle_level,
    trace_lower_bound,
)
from dmfprox.scalar import Branch, prox_scalar, threshold_m_bar
from dmfprox.training import balance_gap, gradient, grad_norm, hessian_trace_exact, objective

RHO_STAR_3_4_3 = 1.9288834158508911254
seeds = st.integers(0, 2**32 - 1)


def gaussian_spec(seed, rows=5, cols=6, depth=3, alpha=0.5):
    target = np.random.default_rng(seed).standard_normal((rows, cols))
    return ProblemSpec(target, depth, alpha * collapse_level(target, depth))


# -- FactorStack / dims -----------------------------------------------------

def test_stack_shape_bookkeeping():
    rng = np.random.default_rng(0)
    dims = (3, 4, 2)
    s = FactorStack((rng.standard_normal((4, 3)), rng.standard_normal((2, 4))))
    assert s.dims == dims and s.depth == 2 and s.n_params == n_params(dims) == 20
    np.testing.assert_array_equal(s.product(), s.layers[1] @ s.layers[0])
    back = FactorStack.from_flat(s.flatten(), dims)
    for a, b in zip(back.layers, s.layers):
        np.testing.assert_array_equal(a, b)


def test_stack_rejects_noncomposing_layers():
    with pytest.raises(InputError):
        FactorStack((np.ones((2, 3)), np.ones((2, 3))))


def test_from_flat_length_mismatch():
    with pytest.raises(InputError):
        FactorStack.from_flat(np.zeros(5), (2, 2))


@pytest.mark.parametrize("dims,shape", [
    ((3, 2), (3, 3)),          # wrong outer dims
    ((4, 1, 3), (3, 4)),       # bottleneck below min(d_0, d_L)
    ((3,), (3, 3)),            # no layers
])
def test_check_dims_rejects(dims, shape):
    with pytest.raises(InputError):
        check_dims(dims, shape)


def test_check_dims_depth_mismatch():
    with pytest.raises(InputError):
        check_dims((2, 2, 2), (2, 2), depth=3)


# -- objective_end2end ------------------------------------------------------

def test_objective_end2end_zero():
    spec = ProblemSpec(np.zeros((2, 3)), 3, 1.0)
    assert objective_end2end(np.zeros((2, 3)), spec) == 0.0


def test_objective_end2end_data_term_only():
    target = np.random.default_rng(1).standard_normal((3, 2))
    spec = ProblemSpec(target, 3, 2.0)
    assert objective_end2end(np.zeros((3, 2)), spec) == pytest.approx(np.sum(target**2), rel=1e-15)


def test_objective_end2end_recomputed():
    rng = np.random.default_rng(2)
    spec = ProblemSpec(rng.standard_normal((3, 4)), 4, 0.7)
    m = rng.standard_normal((3, 4))
    s = np.linalg.svd(m, compute_uv=False)
    ref = np.sum((spec.target - m) ** 2) + 0.7 * np.sum(s**0.5)
    assert objective_end2end(m, spec) == pytest.approx(ref, rel=1e-13)


def test_objective_end2end_shape_mismatch():
    with pytest.raises(InputError):
        objective_end2end(np.zeros((2, 2)), ProblemSpec(np.zeros((2, 3)), 2, 1.0))


# -- solve_closed_form ------------------------------------------------------

def test_solve_zero_target():
    sol = solve_closed_form(ProblemSpec(np.zeros((3, 2)), 3, 1.0))
    assert np.all(sol.m_star == 0) and sol.unique and not sol.on_measure_zero_set


def test_solve_scalar_target():
    sol = solve_closed_form(ProblemSpec([[3.0]], 3, 4.0))
    assert sol.m_star[0, 0] == pytest.approx(RHO_STAR_3_4_3, rel=1e-12)
    assert sol.prox_results[0].branch is Branch.INTERIOR


def test_solve_collapses_above_tau():
    spec = gaussian_spec(3, alpha=1.0 + 1e-6)
    assert np.all(solve_closed_form(spec).m_star == 0.0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(3, 6))
def test_solve_collapse_property(seed, depth):
    spec = gaussian_spec(seed, 4, 3, depth, alpha=1.0 + 1e-8)
    assert np.all(solve_closed_form(spec).m_star == 0.0)


def test_solve_beats_random_perturbations():
    spec = gaussian_spec(4)
    sol = solve_closed_form(spec)
    f0 = objective_end2end(sol.m_star, spec)
    rng = np.random.default_rng(5)
    for radius in (1e-3, 1e-1, 1.0):
        for _ in range(334):
            d = rng.standard_normal(spec.shape)
            d *= radius / np.linalg.norm(d)
            assert f0 <= objective_end2end(sol.m_star + d, spec) + 1e-12 * (1 + f0)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6), st.floats(0.05, 1.5))
def test_solve_alignment_and_decoupling(seed, depth, alpha):
    rng = np.random.default_rng(seed)
    target = rng.standard_normal((4, 5))
    lam = alpha * (collapse_level(target, depth) if depth >= 3 else 1.0)
    spec = ProblemSpec(target, depth, lam)
    sol = solve_closed_form(spec)
    core = sol.svd.u.T @ sol.m_star @ sol.svd.v
    off = core.copy()
    np.fill_diagonal(off, 0.0)
    assert np.linalg.norm(off) <= 1e-8 * (1 + np.linalg.norm(sol.m_star))
    expected = [abs(prox_scalar(s, lam, depth).minimizer) for s in sol.svd.sigma]
    got = np.linalg.svd(sol.m_star, compute_uv=False)
    np.testing.assert_allclose(got, expected, atol=1e-9 * (1 + max(expected)))
    assert np.all(np.diff(sol.sigma_star) <= 0)


def test_repeated_singular_values_stay_repeated():
    rng = np.random.default_rng(6)
    u, v = random_orthogonal(4, rng), random_orthogonal(4, rng)
    target = u @ np.diag([5.0, 3.0, 3.0, 0.5]) @ v.T
    sol = solve_closed_form(ProblemSpec(target, 3, 2.0))
    s = sol.sigma_star
    assert s[1] == pytest.approx(s[2], rel=1e-12)
    assert s[3] == 0.0


def test_objective_value_matches_balanced_stack():
    spec = gaussian_spec(7)
    sol = solve_closed_form(spec)
    dims = (6, 8, 8, 5)
    f = objective(balanced_factors(sol.m_star, dims), spec)
    assert f == pytest.approx(sol.objective_value, rel=1e-8)


def test_balanced_solution_is_stationary():
    spec = gaussian_spec(8)
    sol = solve_closed_form(spec)
    stack = balanced_factors(sol.m_star, (6, 7, 7, 5))
    assert grad_norm(gradient(stack, spec)) <= 1e-6 * (1 + np.linalg.norm(spec.target))


def test_solution_to_dict():
    d = solve_closed_form(gaussian_spec(9)).to_dict()
    assert {"sigma_target", "sigma_star", "unique", "on_measure_zero_set", "objective"} <= set(d)
    assert len(d["sigma_target"]) == 5


# -- measure-zero set -------------------------------------------------------

def test_measure_zero_exact_hit():
    lam, depth = 0.5, 3
    mb = threshold_m_bar(lam, depth)
    assert mb < 1.0
    spec = ProblemSpec(np.diag([1.0, mb]), depth, lam)
    assert is_on_measure_zero_set(spec) == (True, (1,))
    sol = solve_closed_form(spec)
    assert not sol.unique and sol.on_measure_zero_set and sol.offending_indices == (1,)
    assert sol.prox_results[1].branch is Branch.TIE


def test_measure_zero_random_target_misses():
    assert is_on_measure_zero_set(gaussian_spec(10)) == (False, ())


def test_measure_zero_wide_band():
    lam, depth = 0.5, 3
    mb = threshold_m_bar(lam, depth)
    spec = ProblemSpec(np.diag([5.0, 1.2 * mb]), depth, lam)
    assert not is_on_measure_zero_set(spec)[0]
    assert is_on_measure_zero_set(spec, eps=0.5) == (True, (1,))


def test_measure_zero_shallow_is_always_false():
    assert is_on_measure_zero_set(ProblemSpec(np.diag([1.0, 0.25]), 2, 0.5)) == (False, ())


def test_strict_saddle_warning_is_diagnostic_only():
    depth, s = 3, 2.0
    lam = strict_saddle_level(s, depth) ** (1 / depth)
    sol = solve_closed_form(ProblemSpec([[s]], depth, lam))
    assert sol.warnings and "strict-saddle" in sol.warnings[0]
    assert not solve_closed_form(ProblemSpec([[s]], depth, lam * 1.1)).warnings


# -- balanced factors and layer norms ---------------------------------------

def test_balanced_scalar_square_root():
    s = balanced_factors(np.array([[9.0]]), (1, 1, 1))
    assert [float(w[0, 0]) for w in s.layers] == pytest.approx([3.0, 3.0])
    assert layer_norm_constant(np.array([[9.0]]), 2) == pytest.approx(3.0)
    assert 0.5 * (9 + 9) == pytest.approx(schatten_q(np.array([[9.0]]), 1.0))


def test_balanced_zero():
    s = balanced_factors(np.zeros((2, 3)), (3, 4, 2))
    assert all(np.all(w == 0) for w in s.layers)
    assert layer_norm_constant(np.zeros((2, 3)), 2) == 0.0


def test_balanced_random_identities():
    m = np.random.default_rng(11).standard_normal((4, 5))
    dims = (5, 6, 6, 4)
    s = balanced_factors(m, dims)
    assert s.dims == dims
    assert np.linalg.norm(s.product() - m) <= 1e-9 * np.linalg.norm(m)
    mean_sq = np.mean([np.sum(w * w) for w in s.layers])
    assert mean_sq == pytest.approx(schatten_q(m, 2 / 3), rel=1e-9)
    assert balance_gap(s) <= 1e-9
    np.testing.assert_allclose(s.frobenius_norms(), layer_norm_constant(m, 3), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 3))
def test_balanced_property(seed, rows, cols, depth, extra):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((rows, cols))
    hid = max(rows, cols) + extra
    dims = (cols,) + (hid,) * (depth - 1) + (rows,)
    s = balanced_factors(m, dims)
    scale = 1 + np.linalg.norm(m)
    assert np.linalg.norm(s.product() - m) <= 1e-8 * scale
    if depth >= 2:
        assert balance_gap(s) <= 1e-9
        np.testing.assert_allclose(s.frobenius_norms(), layer_norm_constant(m, depth), rtol=1e-9)


def test_balanced_infeasible_dims():
    with pytest.raises(InputError):
        balanced_factors(np.ones((3, 3)), (3, 2, 3))


def test_balanced_handles_rank_deficiency():
    u = np.random.default_rng(12).standard_normal((4, 1))
    m = u @ u.T
    s = balanced_factors(m, (4, 4, 4, 4))
    assert np.linalg.norm(s.product() - m) <= 1e-9 * np.linalg.norm(m)
    assert np.all(np.isfinite(s.flatten()))


# -- trace lower bound ------------------------------------------------------

def test_trace_bound_degenerate():
    spec = ProblemSpec(np.ones((2, 3)), 3, 1.5)
    dims = (3, 4, 4, 2)
    assert trace_lower_bound(np.zeros((2, 3)), 0.0, spec, dims) == pytest.approx(2 * 1.5 / 3 * n_params(dims))


def test_trace_bound_at_balanced_minimizer():
    spec = gaussian_spec(13)
    sol = solve_closed_form(spec)
    dims = (6, 7, 7, 5)
    g = layer_norm_constant(sol.m_star, 3)
    bound = trace_lower_bound(sol.m_star, g, spec, dims)
    assert hessian_trace_exact(balanced_factors(sol.m_star, dims), spec) >= bound - 1e-9 * bound
