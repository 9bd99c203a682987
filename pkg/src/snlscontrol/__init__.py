"""Simulation and bilinear optimal control of the stochastic NLS equation
with conservative linear multiplicative noise, on a periodic spectral grid.
"""

from .core import (
    Field,
    Grid,
    GridSpec,
    StrichartzPair,
    canonical_pair,
    inner,
    is_admissible_pair,
    lp_norm,
    make_grid,
    read_field,
    strichartz_norm,
    theta_exponent,
    write_field,
)
from .model import (
    AdmissibleSet,
    CostSpec,
    NoiseSpec,
    PhysicsSpec,
    Problem,
    check_hypotheses,
    h1,
    h2,
    mu_field,
    project,
    reduced_cost_report,
)
from .paths import BrownianPath, gauge_factor, refine_path, sample_ensemble, sample_path
from .dynamics import (
    ControlPath,
    LinearizedTrajectory,
    MassDriftError,
    NumericalAbort,
    TrajectoryRecord,
    energy,
    mass,
    solve_dual_test,
    solve_forward,
    solve_variation,
    step_forward,
)
from .adjoint import (
    BackwardSolution,
    duality_check,
    estimate_martingale_integrand,
    pmp_residual,
    solve_backward,
    terminal_condition,
)
from .optimizer import (
    BangBangReport,
    CostEstimate,
    GradientReport,
    OptimizeResult,
    bang_bang_example,
    classify_bang_bang,
    descent_step,
    evaluate_cost,
    fd_directional_derivative,
    gradient,
    optimize,
)

__version__ = "0.1.0"
