"""Closed-form minimizers of l2-regularized deep matrix factorization."""

from .core import (
    DEFAULT_TOL,
    InputError,
    NumericalError,
    OrderedSvd,
    PreconditionError,
    ProblemSpec,
    Tolerances,
    read_matrix_csv,
    schatten_q,
    svd_ordered,
    von_neumann_gap,
    write_matrix_csv,
)
from .matrix import (
    FactorStack,
    MatrixSolution,
    balanced_factors,
    is_on_measure_zero_set,
    layer_norm_constant,
    objective_end2end,
    solve_closed_form,
    trace_lower_bound,
)
from .oracles import GridSpec, fiber_sample_oracle, finite_diff_gradient, prox_grid_oracle
from .scalar import (
    Branch,
    ProxResult,
    ScalarSpectrum,
    collapse_lambda,
    hessian_spectrum_scalar,
    prox_scalar,
    stationary_root,
    threshold_m_bar,
)
from .training import (
    GdConfig,
    TrainTrace,
    balance_gap,
    gd_grid_search,
    gd_run,
    gradient,
    hessian_fd,
    hessian_trace_exact,
    make_grid,
    objective,
)

__version__ = "0.1.0"
