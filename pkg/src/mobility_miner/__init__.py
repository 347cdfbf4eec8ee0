"""Daily mobility pattern discovery from GPS records.

Each day's points are fitted with a truncated Dirichlet-process Gaussian
mixture, days are compared by Monte-Carlo KL divergence, and a sequential
threshold scan groups similar days into patterns.
"""

from .discovery import (DensityCatalog, MobilityPattern, PatternSet, Thresholds,
                        discover, summarize, varying_length_experiment)
from .dpmm import (DpPrior, NumericalError, TruncationConfig, VariationalPosterior,
                   elbo, extract_mixture, fit_variational, stick_lengths_to_weights)
from .experiments import compare_models
from .gmm import (GaussianComponent, MixtureDensity, fit_em, log_density,
                  mean_log_likelihood, sample)
from .kl import (DivergenceEstimate, DivergencePair, McConfig, kl_gaussian_closed_form,
                 kl_mc, kl_pair)
from .synthetic import (GeneratorConfig, RouteTemplate, commuter_templates, generate,
                        rand_index, score_recovery)
from .trajectory import (DailyTrajectory, GeoRecord, ProjectionConfig, UserDataset,
                         parse_records, project, segment_by_day)

__version__ = "0.1.0"

__all__ = [
    "DailyTrajectory", "DensityCatalog", "DivergenceEstimate", "DivergencePair",
    "DpPrior", "GaussianComponent", "GeneratorConfig", "GeoRecord", "McConfig",
    "MixtureDensity", "MobilityPattern", "NumericalError", "PatternSet",
    "ProjectionConfig", "RouteTemplate", "Thresholds", "TruncationConfig",
    "UserDataset", "VariationalPosterior", "commuter_templates", "compare_models",
    "discover", "elbo", "extract_mixture", "fit_em", "fit_variational", "generate",
    "kl_gaussian_closed_form", "kl_mc", "kl_pair", "log_density", "mean_log_likelihood",
    "parse_records", "project", "rand_index", "sample", "score_recovery",
    "segment_by_day", "stick_lengths_to_weights", "summarize",
    "varying_length_experiment",
]
