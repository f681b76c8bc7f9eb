"""Girsanov transforms for BSDEs on an exact discrete Wiener space, and the
fixed-point representation of quasi-linear parabolic systems they yield."""

from .bsde import BsdeSolution, solve_driver_bsde, solve_martingale_bsde, transform_bsde
from .cameron_martin import (
    chain_solve,
    check_representation,
    contraction_factor,
    contraction_horizon,
    phi,
    picard_solve,
    solve_point,
    solve_u,
)
from .coefficients import CoefficientSet, certify, make_coefficients
from .errors import (
    BsdeLabError,
    CapacityError,
    CFLError,
    ConvergenceError,
    GuardError,
    KBoundError,
    MartingaleError,
    ScopeError,
    StepSizeError,
)
from .estimates import density_moment_bound, estimate_one, estimate_two, gradient_corollary
from .fbsde_mc import McConfig, girsanov_reweighting, simulate_fbsde
from .flow import FlowCoefficients, FlowState, bismut_check, flow_horizon, h_norm, phi_flow, picard_flow
from .girsanov import check_density_invariance, compensate, exponential_martingale, tilt_measure
from .pde_oracle import Grid, GridFamily, GridFunction, cole_hopf, heat_apply, solve_fd
from .wiener_tree import (
    AdaptedProcess,
    Measure,
    PathTree,
    TerminalVariable,
    bracket,
    build_tree,
    cond_exp,
    ito_sum,
    martingale_density,
)

__version__ = "0.1.0"
