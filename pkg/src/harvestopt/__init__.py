"""harvestopt: one-sided impulse control of linear diffusions.

Solves the optimal-harvesting problem — when to push a diffusing state down
and by how much, paying a fixed cost per intervention — end to end:
fundamental solutions and boundary classification, the resolvent-based
free-boundary system, case taxonomy with epsilon-optimal schedules, the
value function with HJB certificates, and Monte Carlo validation of the
threshold policy against closed-form functionals.
"""

__version__ = "0.1.0"

from . import errors
from .boundary import (
    FreeBoundarySolution,
    StructuralPoints,
    c_thresholds,
    epsilon_sequence,
    f_gamma_beta,
    find_x_lower,
    find_x_upper,
    gamma_of_beta,
    solve_boundaries,
    sweep_c,
)
from .diffusion import (
    BoundaryReport,
    DiffusionSpec,
    FundamentalPair,
    classify_boundaries,
    custom,
    fundamental_solutions,
    gbm,
    log_ou,
    logistic,
    make_diffusion,
    mean_rev_sqrt,
    scale_derivative,
)
from .montecarlo import (
    HAVE_COMPILED_KERNEL,
    PathRecord,
    SimulationEstimate,
    StrategyBG,
    analytic_performance,
    estimate_performance,
    intervention_discount_sum,
    refinement_bias_check,
    run_simulation,
    simulate_path,
)
from .options import DEFAULT_OPTIONS, SolverOptions
from .payoffs import (
    PayoffSpec,
    capped_linear_a,
    capped_linear_b,
    custom_payoff,
    exp_capped,
    make_payoff,
    piecewise_a,
    piecewise_b,
    power_payoff,
)
from .resolvent import (
    ResolventTable,
    ThetaFunction,
    g_function,
    k_infinity,
    q_theta,
    resolvent,
    theta_from_payoffs,
)
from .valuefn import (
    ValueFunction,
    build_value_function,
    entrance_boundary_diagnostic,
    hjb_residuals,
    smooth_fit_report,
    verify_value_function,
)
