"""Sub-optimal Riccati feedback and moment-driven predictive control for
interacting-agent consensus dynamics."""

from mdpc.bounds import (
    BoundContext,
    delta_m,
    delta_sigma,
    make_context,
    mean_decay_inexact,
    mean_decay_open_loop,
    variance_bounds_closed_loop,
    variance_bounds_inexact,
    variance_bounds_open_loop,
)
from mdpc.control import ControlMode, CostAccumulator, accumulate_cost, evaluate_control
from mdpc.ensemble import (
    Ensemble,
    InitialDistribution,
    empirical_moments,
    microscopic_step_exact,
    mfmc_step_first_order,
    mfmc_step_second_order,
    sample_initial,
)
from mdpc.errors import ConfigError, DivergenceError
from mdpc.kernels import (
    KernelSpec,
    attraction_repulsion,
    bounded_confidence,
    cucker_smale,
    evaluate,
    kernel_bounds,
    linearization_coefficient,
)
from mdpc.mdpc import (
    ExperimentBundle,
    MdpcConfig,
    MdpcRun,
    next_trigger_mean_sigma,
    next_trigger_sigma,
    run_mdpc,
)
from mdpc.riccati import (
    RiccatiConfig,
    RiccatiSolution,
    s_closed_form,
    solve_full_matrix_oracle,
    solve_limit,
    solve_scaled_finite_n,
)

__version__ = "0.1.0"
