"""Bayesian profile regression for count outcomes.

Clusters subjects on continuous covariates and a Poisson count jointly,
with per-variable shrinkage that flags covariates irrelevant to the
clustering.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    DomainError,
    NumericalError,
    ProfregError,
    StructureError,
)
from .model import ChainState, Dataset, Hyperparameters, PosteriorSamples  # noqa: E402
from .sampler import McmcSchedule, ModelSpec, WeightPrior, run_chain  # noqa: E402
from .inference import (  # noqa: E402
    compute_ic,
    membership_posterior,
    posterior_predictive,
    profile_report,
    select_k,
)
from .datagen import GenerativeTruth, generate, benchmark_truth  # noqa: E402

__all__ = [
    "ChainState", "ConfigError", "DataError", "Dataset", "DomainError", "GenerativeTruth",
    "Hyperparameters", "McmcSchedule", "ModelSpec", "NumericalError", "PosteriorSamples",
    "ProfregError", "StructureError", "WeightPrior", "compute_ic", "generate",
    "membership_posterior", "benchmark_truth", "posterior_predictive", "profile_report",
    "run_chain", "select_k",
]
