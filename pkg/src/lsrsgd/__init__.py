"""Mini-batch, tail-averaged and parallel SGD for streaming least squares.

Monte Carlo runs sit next to an exact second-moment recursion, and there are
tools for the stepsize and trace quantities that govern them.
"""
from .problem import (DerivedScalars, ProblemInstance, additive_instance, compute_r_squared,
                      compute_rho_m, compute_sigma2_mle, empirical_instance,
                      gaussian_fourth_moment, gaussian_instance, separation_instance)
from .operators import (StepsizeReport, SymOperator, batch_threshold, build_T_b,
                        divergent_stepsize, kappa_b, minimax_stepsize, stepsize_report,
                        verify_operator_lemmas)
from .dynamics import (exact_covariance_step, exact_risk_curve, exact_tail_averaged_risk,
                       steady_state_covariance)
from .bounds import theorem_bounds
from .samplers import NoiseModel, draw_batch, fit_heteroscedastic_coefficients
from .engine import SgdConfig, run_final_iterate_sgd, run_many, run_minibatch_tail_sgd
from .schedules import (AveragingPlan, DoublingPlan, run_doubling, run_doubling_with_oracle,
                        run_model_averaging)
from .risk import RiskCurve, aggregate_curves, decompose_run, excess_risk

__version__ = "0.1.0"

__all__ = [
    "DerivedScalars",
    "ProblemInstance",
    "additive_instance",
    "compute_r_squared",
    "compute_rho_m",
    "compute_sigma2_mle",
    "empirical_instance",
    "gaussian_fourth_moment",
    "gaussian_instance",
    "separation_instance",
    "StepsizeReport",
    "SymOperator",
    "batch_threshold",
    "build_T_b",
    "divergent_stepsize",
    "kappa_b",
    "minimax_stepsize",
    "stepsize_report",
    "verify_operator_lemmas",
    "exact_covariance_step",
    "exact_risk_curve",
    "exact_tail_averaged_risk",
    "steady_state_covariance",
    "theorem_bounds",
    "NoiseModel",
    "draw_batch",
    "fit_heteroscedastic_coefficients",
    "SgdConfig",
    "run_final_iterate_sgd",
    "run_many",
    "run_minibatch_tail_sgd",
    "AveragingPlan",
    "DoublingPlan",
    "run_doubling",
    "run_doubling_with_oracle",
    "run_model_averaging",
    "RiskCurve",
    "aggregate_curves",
    "decompose_run",
    "excess_risk",
]
