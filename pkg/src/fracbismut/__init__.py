"""Bismut-type gradient estimators for degenerate SDEs driven by fractional Brownian motion."""

from .bridge import BridgeSet, build_bridge, kalman_rank
from .errors import (ConfigError, CouplingError, DegeneracyError, DivergenceError,
                     FracBismutError, KernelValidationError)
from .fbm import covariance_RH, sample_fbm_batch, sample_noise_pair
from .fracops import (FractionalKernelSet, apply_KH, apply_KH_inverse, apply_KH_star,
                      rl_integral_left, weyl_derivative_left)
from .gradient import (McEstimate, estimate_gradient, estimate_gradient_bismut,
                       estimate_gradient_fd, estimate_gradient_pathwise, girsanov_check,
                       make_test_function, malliavin_weight)
from .grid import Path, SeedSpec, TimeGrid
from .harnack import (HarnackConstants, HarnackReport, check_harnack, check_log_harnack,
                      gradient_entropy_check, phi_bound)
from .model import DegenerateModel, kinetic_model, load_model, nilpotent_model
from .sde import euler_batch, euler_solve, solve_coupled, variational_solve

__version__ = "0.1.0"

__all__ = [
    "BridgeSet", "ConfigError", "CouplingError", "DegeneracyError", "DegenerateModel",
    "DivergenceError", "FracBismutError", "FractionalKernelSet", "HarnackConstants",
    "HarnackReport", "KernelValidationError", "McEstimate", "Path", "SeedSpec", "TimeGrid",
    "apply_KH", "apply_KH_inverse", "apply_KH_star", "build_bridge", "check_harnack",
    "check_log_harnack", "covariance_RH", "estimate_gradient", "estimate_gradient_bismut",
    "estimate_gradient_fd", "estimate_gradient_pathwise", "euler_batch", "euler_solve",
    "girsanov_check", "gradient_entropy_check", "kalman_rank", "kinetic_model", "load_model",
    "make_test_function", "malliavin_weight", "nilpotent_model", "phi_bound",
    "rl_integral_left", "sample_fbm_batch", "sample_noise_pair", "solve_coupled",
    "variational_solve", "weyl_derivative_left",
]
