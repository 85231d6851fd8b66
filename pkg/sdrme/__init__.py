"""
sdrme - self density-ratio matching estimators for unnormalized models
"""

__version__ = "1.0.0"

from .bregman import Generator, LinkPair, GammaConfig, certify_convexity, generator_by_name
from .core import Dataset, ExtendedModel, SampleSpace, Tau, UnnormalizedModel
from .errors import ConfigError, SdrmeError
from .estimators import EstimatorSpec, fit_estimator
from .models import build_model
from .optimize import FitConfig, FitResult

__all__ = [
    "Dataset", "EstimatorSpec", "ExtendedModel", "FitConfig", "FitResult", "GammaConfig",
    "Generator", "LinkPair", "SampleSpace", "SdrmeError", "ConfigError", "Tau",
    "UnnormalizedModel", "build_model", "certify_convexity", "fit_estimator",
    "generator_by_name",
]
