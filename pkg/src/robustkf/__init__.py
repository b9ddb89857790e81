"""Kalman filter design with maximal tolerable process and sensor noise."""

from .cases import CASE_NAMES, BenchmarkCase, benchmark_case, cwh_model, f16_model
from .design import (DesignError, DesignSolution, DesignSpec, ExactCovariance,
                     InfeasibleDesignError, NumericalFailureError, TraceBound,
                     UnobservableModelError, design_robust_filter)
from .model import Domain, LtiModel, load_model, save_model, tustin_discretize, validate_model
from .sim import SimConfig, SimResult, propagate_covariance, simulate_filter
from .solver import SolverOptions, SolverStatus
from .sparse import SparsityResult, prune_sensors, reweighted_l1, sparse_design
from .verify import (VerificationReport, check_lmi_residual, dare_steady_state,
                     joseph_fixed_point, care_lyapunov_steady_state, verify_solution)

__all__ = [
    "CASE_NAMES", "BenchmarkCase", "benchmark_case", "cwh_model", "f16_model",
    "DesignError", "DesignSolution", "DesignSpec", "ExactCovariance", "InfeasibleDesignError",
    "NumericalFailureError", "TraceBound", "UnobservableModelError", "design_robust_filter",
    "Domain", "LtiModel", "load_model", "save_model", "tustin_discretize", "validate_model",
    "SimConfig", "SimResult", "propagate_covariance", "simulate_filter",
    "SolverOptions", "SolverStatus",
    "SparsityResult", "prune_sensors", "reweighted_l1", "sparse_design",
    "VerificationReport", "check_lmi_residual", "dare_steady_state", "joseph_fixed_point",
    "care_lyapunov_steady_state", "verify_solution",
]
