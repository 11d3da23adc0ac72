"""Moving horizon estimation with an iteratively preconditioned gradient solver.

Modules:
    model     system models (unicycle, linear, finite-difference wrapped),
              bounded noise, simulation
    mhe       horizon problems: objective, gradient, block-tridiagonal
              Hessian, anchor weight propagation, warm starts
    solvers   preconditioned gradient solver plus Newton / gradient-descent
              comparators
    convexity per-stage positive-semidefiniteness and diagonal-dominance
              certificates
    baselines extended Kalman filter
    bench     sliding-window pipeline, Monte-Carlo benchmark, reporting
    kernels   numba-accelerated hot loops with a pure-numpy fallback
              (select via the MHEIPG_BACKEND environment variable)
"""

from .baselines import EkfState, ekf_step, run_ekf
from .bench import RunConfig, bench, estimation_errors, kernel_bench, mhe_pipeline, rmse
from .blocktri import BlockTridiagonal, apply_plus_beta, lambda_max
from .convexity import (
    ConvexityBlock,
    ConvexityReport,
    build_block,
    certify,
    check_diag_dominant,
    check_psd,
    hessian_sum_check,
)
from .mhe import (
    ArrivalCost,
    MheProblem,
    Weights,
    Window,
    make_evaluator,
    pack,
    problem_from_json,
    problem_to_json,
    riccati_update,
    unpack,
    warm_start,
    window_from_trajectory,
)
from .model import (
    NoiseSpec,
    SystemModel,
    Trajectory,
    linear_model,
    numeric_model,
    ramp_inputs,
    simulate,
    unicycle_derivatives,
    unicycle_model,
    unicycle_observe,
    unicycle_step,
)
from .solvers import (
    IpgConfig,
    SolveReport,
    SolveTrace,
    gd_solve,
    ipg_solve,
    lemma1_bound_check,
    newton_solve,
    optimal_preconditioner,
    rho_k,
    step_alpha,
)

__version__ = "0.1.0"
