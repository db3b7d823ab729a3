"""Multivariate spatial ordinal regression for area-level survey data.

Ordinal answers follow a cumulative-logit model whose linear predictor holds
correlated Leroux CAR areal effects (and, optionally, correlated individual
random effects).  The posterior is explored with an adaptive random-walk
Metropolis-within-Gibbs sampler.

Modules: ``graph`` (adjacency and the Leroux CAR prior), ``model`` (likelihood
and prior), ``sampler`` (MCMC), ``diagnostics`` (split R-hat, ESS, WAIC),
``posterior`` (summaries, correlations, PCA, predictive checks,
post-stratification), ``synth`` (synthetic data), ``io`` and ``cli``.
"""

from .diagnostics import convergence_report, effective_sample_size, gelman_rubin, waic
from .graph import AdjacencyGraph, from_edges, lcar_logdensity, lcar_logdet, lcar_sample, load_adjacency
from .model import CutpointMode, ModelSpec, ParameterState, SurveyDataset, Variant, logposterior
from .sampler import PosteriorDraws, SamplerConfig, run_chains

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "CutpointMode",
    "ModelSpec",
    "ParameterState",
    "PosteriorDraws",
    "SamplerConfig",
    "SurveyDataset",
    "Variant",
    "convergence_report",
    "effective_sample_size",
    "from_edges",
    "gelman_rubin",
    "lcar_logdensity",
    "lcar_logdet",
    "lcar_sample",
    "load_adjacency",
    "logposterior",
    "run_chains",
    "waic",
    "__version__",
]
