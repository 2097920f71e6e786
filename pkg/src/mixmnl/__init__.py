"""Variational inference for mixed multinomial logit discrete choice models.

Provides empirical Bayes (point-estimated population parameters) and
fully Bayesian (mean-field posterior) fits, a scenario simulator with
retained ground truth, predictive-distribution evaluation by total
variation error, scikit-learn style estimator wrappers, and a batch CLI
(``mixmnl simulate|fit|eval|bench``).
"""

from .approx import (expected_lse_d0, expected_lse_d1, grad_expected_lse_d1_mu,
                     grad_expected_lse_d1_sigma, softmax_weights, theta_diag)
from .elbo import (VariationalAgent, VariationalGlobal, elbo_eb, elbo_hb,
                   wishart_elogdet, wishart_lognorm)
from .estimators import MixedLogitVB, MixedLogitVEB
from .evaluate import (BenchmarkResult, PredictiveEstimate, PredictiveReport,
                       benchmark_scenario, posterior_predictive_choice,
                       predictive_choice, ternary_coordinates, tv_error)
from .model import (AgentData, ChoiceDataset, Hyperpriors, PopulationParams,
                    log_likelihood_agent, mnl_choice_prob)
from .optimize import OptimizeResult, OptimizeSettings, maximize
from .simulate import GroundTruth, ScenarioConfig, scenario_params, simulate_dataset
from .validation import ConvergenceError, LineSearchError, NotSPDError
from .vb import (HBFit, compute_omega, estep_agent_hb, fit_vb, update_mu_zeta,
                 update_sigma_zeta, update_upsilon)
from .veb import EBFit, estep_agent, fit_veb, init_homogeneous, mstep

__version__ = "0.1.0"

__all__ = [
    "AgentData", "BenchmarkResult", "ChoiceDataset", "ConvergenceError",
    "EBFit", "GroundTruth", "HBFit", "Hyperpriors", "LineSearchError",
    "MixedLogitVB", "MixedLogitVEB", "NotSPDError", "OptimizeResult",
    "OptimizeSettings", "PopulationParams", "PredictiveEstimate",
    "PredictiveReport", "ScenarioConfig", "VariationalAgent",
    "VariationalGlobal", "benchmark_scenario", "compute_omega", "elbo_eb",
    "elbo_hb", "estep_agent", "estep_agent_hb", "expected_lse_d0",
    "expected_lse_d1", "fit_vb", "fit_veb", "grad_expected_lse_d1_mu",
    "grad_expected_lse_d1_sigma", "init_homogeneous", "log_likelihood_agent",
    "maximize", "mnl_choice_prob", "mstep", "posterior_predictive_choice",
    "predictive_choice", "scenario_params", "simulate_dataset",
    "softmax_weights", "ternary_coordinates", "theta_diag", "tv_error",
    "update_mu_zeta", "update_sigma_zeta", "update_upsilon",
    "wishart_elogdet", "wishart_lognorm",
]
