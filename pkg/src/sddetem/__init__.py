"""Truncated Euler-Maruyama simulation for stochastic differential delay
equations, with Monte Carlo harnesses for convergence order, moment bounds
and moment-stability equivalence experiments."""

from .analysis import (
    ConvergenceReport,
    DecayFit,
    EquivalenceReport,
    MomentSeries,
    StepGapReport,
    TransferConstants,
    check_transfer_condition,
    equivalence_experiment,
    estimate_moment,
    fit_decay,
    step_gap_scaling,
    strong_error,
    transfer_constants,
)
from .conditions import (
    ConditionReport,
    SampleSpec,
    check_holder_initial,
    check_khasminskii,
    check_local_lipschitz,
    check_monotonicity_u,
    check_polynomial_growth,
    estimate_coefficient_growth,
    estimate_h3,
)
from .errors import ConfigError, NumericRangeError, SddeError
from .model import (
    InitialSegment,
    ProblemRegistryEntry,
    SddeProblem,
    constant_segment,
    eval_diffusion,
    eval_drift,
    eval_initial,
    get_problem,
    ramp_segment,
    registry_keys,
)
from .noise import BrownianLattice, coarsen, master_increments
from .scheme import (
    SchemeRun,
    TrajectoryEnsemble,
    TruncationPolicy,
    interpolant_value,
    simulate,
    simulate_sampled,
    step,
    step_process_value,
    truncate_state,
    truncated_coefficients,
    truncation_radius,
)

__version__ = "0.1.0"
