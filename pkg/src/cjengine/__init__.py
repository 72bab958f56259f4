"""Comparative judgement engine.

Spatial Bradley-Terry inference with Polya-Gamma data augmentation,
distance-dependent clustering, prior-driven comparison scheduling, and a
live study service for collecting judgements.
"""

__version__ = "0.1.0"

from .clustering import ClusterConfig, NIGBase, fit_clustered
from .comparisons import ComparisonRecord, Tallies, log_likelihood, tally, win_probability
from .inference import FitConfig, PosteriorSummary, effective_sample_size, fit, mh_baseline_fit
from .pairs import PairIndex
from .polya_gamma import PGParams, pg_mean, pg_variance, sample_pg, sample_pg_vector
from .scheduling import (
    ScheduleDistribution,
    difference_covariance,
    draw_schedule,
    naive_spatial_schedule,
    pc_schedule,
    uniform_schedule,
    utility,
)
from .simulation import demo_graph, run_design_study, run_sampler_benchmark
from .spatial import (
    SpatialCovariance,
    WardGraph,
    adjacency_from_polygons,
    communicability,
    communicability_affinity,
    prior_covariance,
    sample_prior,
)

__all__ = [
    "ClusterConfig",
    "ComparisonRecord",
    "FitConfig",
    "NIGBase",
    "PGParams",
    "PairIndex",
    "PosteriorSummary",
    "ScheduleDistribution",
    "SpatialCovariance",
    "Tallies",
    "WardGraph",
    "adjacency_from_polygons",
    "communicability",
    "communicability_affinity",
    "demo_graph",
    "difference_covariance",
    "draw_schedule",
    "effective_sample_size",
    "fit",
    "fit_clustered",
    "log_likelihood",
    "mh_baseline_fit",
    "naive_spatial_schedule",
    "pc_schedule",
    "pg_mean",
    "pg_variance",
    "prior_covariance",
    "run_design_study",
    "run_sampler_benchmark",
    "sample_pg",
    "sample_pg_vector",
    "sample_prior",
    "tally",
    "uniform_schedule",
    "utility",
    "win_probability",
]
