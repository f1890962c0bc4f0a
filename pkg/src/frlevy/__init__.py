"""Fractional Lévy noise: jump sampling, fractional integrals, chaos calculus, fields and SPDE solvers."""
from .chaos import ChaosProcess, ChaosVector, DiscreteU, s_transform, skorohod_delta, wick_exp, wick_product
from .field import covariance_oracle, field_kernel, noise_kernel, s_transform_field, sample_field
from .fracops import BetaVector, MixedExponent, frac_integral_minus, frac_integral_plus, mixed_norm
from .grid import GridFunction, GridSpec
from .harness import ValidationReport, mc_estimate, picard_decay_report, validate_char, validate_isometry
from .levy import LevyModel, NoiseRealization, derive_seed, levy_exponent, sample_noise_grid, second_moment
from .spde import (
    DomainSpec,
    GreenOperator,
    Nonlinearity,
    SolutionField,
    green_dirichlet,
    heat_l2_condition,
    lipschitz_check,
    picard_condition,
    solve_heat,
    solve_poisson,
    solve_quasilinear,
)

__version__ = "0.1.0"

__all__ = [
    "BetaVector",
    "ChaosProcess",
    "ChaosVector",
    "DiscreteU",
    "DomainSpec",
    "GreenOperator",
    "GridFunction",
    "GridSpec",
    "LevyModel",
    "MixedExponent",
    "NoiseRealization",
    "Nonlinearity",
    "SolutionField",
    "ValidationReport",
    "covariance_oracle",
    "derive_seed",
    "field_kernel",
    "frac_integral_minus",
    "frac_integral_plus",
    "green_dirichlet",
    "heat_l2_condition",
    "levy_exponent",
    "lipschitz_check",
    "mc_estimate",
    "mixed_norm",
    "noise_kernel",
    "picard_condition",
    "picard_decay_report",
    "s_transform",
    "s_transform_field",
    "sample_field",
    "sample_noise_grid",
    "second_moment",
    "skorohod_delta",
    "solve_heat",
    "solve_poisson",
    "solve_quasilinear",
    "validate_char",
    "validate_isometry",
    "wick_exp",
    "wick_product",
]
