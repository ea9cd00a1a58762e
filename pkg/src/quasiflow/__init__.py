"""Finite-difference laboratory for quasilinear p-Laplacian flows and their steady states."""
__version__ = "0.1.0"

from .coefficients import (CoefficientModel, HypothesisReport, NonlinearityModel,
                           check_structural_hypotheses, check_uniqueness_conditions, coefficient,
                           extend_f_hat, nonlinearity)
from .flow import FlowConfig, Trajectory, run_flow, sample_omega_limit, verify_energy_inequality
from .grid import Domain, Field, Grid, build_grid, integrate, norm_Lq, norm_W1p, reflect_field
from .operators import RegularizationParams, energy, residual
from .stationary import exact_p_torsion, solve_stationary, verify_stationary

__all__ = [
    "CoefficientModel", "NonlinearityModel", "HypothesisReport", "check_structural_hypotheses",
    "check_uniqueness_conditions", "coefficient", "nonlinearity", "extend_f_hat",
    "FlowConfig", "Trajectory", "run_flow", "sample_omega_limit", "verify_energy_inequality",
    "Domain", "Field", "Grid", "build_grid", "integrate", "norm_Lq", "norm_W1p", "reflect_field",
    "RegularizationParams", "energy", "residual",
    "exact_p_torsion", "solve_stationary", "verify_stationary",
]
