"""Adaptive robust stochastic control with Gaussian-process value surrogates.

The package solves finite-horizon discrete-time control problems in which the
dynamics depend on unknown parameters theta = (mu, sigma) that are learned
online.  At each step the controller plays a max-min (or min-max) game against
an adversary who picks theta inside a shrinking data-driven confidence
ellipsoid around the running maximum-likelihood estimates.  The value function
of the resulting Bellman recursion is carried between time steps by Gaussian
process regression on scattered state-space designs.

Two concrete problems ship with the package: terminal-utility portfolio
optimization under CRRA preferences and loss-based hedging of a European call.
"""

__version__ = "0.1.0"

from .dynamics import (
    AugmentedState,
    Beliefs,
    LossFunction,
    ModelParams,
    ProblemSpec,
    UncertaintyEllipsoid,
    call_payoff,
    chi2_quantile_2dof,
    crra_utility,
    drift_interval,
    ellipsoid_point,
    transition_hedging,
    transition_portfolio,
    uncertainty_set,
    update_beliefs,
)
from .numerics import QuadratureRule, convex_hull, expect, gaussian_rule, mc_expect, minimize_scalar, sobol
from .gp import GpSurrogate, KernelSpec, fit, log_marginal_likelihood, predict_cov, predict_mean, predict_var
from .solver import (
    Design,
    PolicyBundle,
    SolveError,
    SolverConfig,
    StepSolution,
    macro_replicate,
    outer_optimize,
    solve,
)
from .evaluator import (
    EvalReport,
    TestMeasure,
    adaptive_delta,
    adaptive_robust,
    bs_delta,
    bs_price,
    constant,
    evaluate,
    merton_control,
    merton_static,
    myopic_adaptive,
    myopic_adaptive_table,
    report_stats,
    static_robust,
    static_robust_solve,
    theta_grid_over_initial_set,
)
from .config import ConfigError, RunConfig, load_config
from .artifacts import load_artifact, save_artifact

__all__ = [
    "__version__",
    "AugmentedState",
    "Beliefs",
    "LossFunction",
    "ModelParams",
    "ProblemSpec",
    "UncertaintyEllipsoid",
    "call_payoff",
    "chi2_quantile_2dof",
    "crra_utility",
    "drift_interval",
    "ellipsoid_point",
    "transition_hedging",
    "transition_portfolio",
    "uncertainty_set",
    "update_beliefs",
    "QuadratureRule",
    "convex_hull",
    "expect",
    "gaussian_rule",
    "mc_expect",
    "minimize_scalar",
    "sobol",
    "GpSurrogate",
    "KernelSpec",
    "fit",
    "log_marginal_likelihood",
    "predict_cov",
    "predict_mean",
    "predict_var",
    "Design",
    "PolicyBundle",
    "SolveError",
    "SolverConfig",
    "StepSolution",
    "macro_replicate",
    "outer_optimize",
    "solve",
    "EvalReport",
    "TestMeasure",
    "adaptive_delta",
    "adaptive_robust",
    "bs_delta",
    "bs_price",
    "constant",
    "evaluate",
    "merton_control",
    "merton_static",
    "myopic_adaptive",
    "myopic_adaptive_table",
    "report_stats",
    "static_robust",
    "static_robust_solve",
    "theta_grid_over_initial_set",
    "ConfigError",
    "RunConfig",
    "load_config",
    "load_artifact",
    "save_artifact",
]
