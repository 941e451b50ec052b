"""Optimal stock-to-bond allocation for pension savings.

Continuous-time HJB model: asymptotic series for the transformed solution,
closed-form envelopes, a finite-difference oracle, a time-discrete Bellman
oracle and Monte-Carlo wealth simulation.
"""

from .bounds import BoundPair, Envelope, psi_envelope, theta_bracket, value_envelope, varsigma
from .dp import ValueGrid, expected_value, solve_bellman, superoptimality_check, transition
from .model import (
    ConfigError,
    DerivedCoefficients,
    DomainError,
    ModelParams,
    StructuralHypothesisError,
    UtilitySpec,
    derive_coefficients,
    load_scenario,
    risk_aversion_threshold,
    utility,
)
from .pde import FdGrid, solve_pde
from .policy import (
    FirstOrderPolicy,
    InvalidPsiError,
    PolicySurface,
    build_policy_surface,
    clip_theta,
    sensitivity,
    sensitivity_precondition,
    theta_first_order,
    theta_from_psi,
)
from .series import NumericError, SeriesSolution, build_series, eval_psi, psi2_closed_form, stable_expm_ratio
from .sim import EnsembleStats, compare_policies, simulate_paths

__all__ = [
    "BoundPair", "ConfigError", "DerivedCoefficients", "DomainError", "EnsembleStats", "Envelope", "FdGrid",
    "FirstOrderPolicy", "InvalidPsiError", "ModelParams", "NumericError", "PolicySurface", "SeriesSolution",
    "StructuralHypothesisError", "UtilitySpec", "ValueGrid", "build_policy_surface", "build_series", "clip_theta",
    "compare_policies", "derive_coefficients", "eval_psi", "expected_value", "load_scenario", "psi2_closed_form",
    "psi_envelope", "risk_aversion_threshold", "sensitivity", "sensitivity_precondition", "simulate_paths",
    "solve_bellman", "solve_pde", "stable_expm_ratio", "superoptimality_check", "theta_bracket",
    "theta_first_order", "theta_from_psi", "transition", "utility", "value_envelope", "varsigma",
]
