"""Certified bounds on how far OLS coefficients can move when a few samples
are removed, with attack baselines and synthetic data generators."""

from .acre import ACRE, Certificate, RemovalBounds, acre_bounds, certify
from .baselines import AMIPAttack, AttackResult, amip_attack, influence_scores
from .datagen import SyntheticSpec, generate, make_brittle
from .exceptions import AuditError, ConfigError, DataError, NumericalError, ResourceError
from .msn import (greedy_lower_bound, ku_triangle_bound, rti_bound,
                  spectral_bound)
from .ohare import OHARE, Buckets, ohare_bounds, reaverage
from .regression import (RegressionData, exact_delta, fit_ols, normalize,
                         refit_without)

__all__ = [
    "ACRE", "OHARE", "AMIPAttack",
    "RegressionData", "Buckets", "RemovalBounds", "Certificate", "AttackResult",
    "SyntheticSpec",
    "fit_ols", "normalize", "refit_without", "exact_delta",
    "rti_bound", "spectral_bound", "greedy_lower_bound", "ku_triangle_bound",
    "acre_bounds", "ohare_bounds", "reaverage", "certify",
    "amip_attack", "influence_scores", "generate", "make_brittle",
    "AuditError", "ConfigError", "DataError", "NumericalError", "ResourceError",
]
