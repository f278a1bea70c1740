"""Doubly robust survey-mean estimation with boosted propensity scores."""

from .dgp import Scenario, Dataset, generate_replicate, replicate_rng

__all__ = ["Scenario", "Dataset", "generate_replicate", "replicate_rng"]

__version__ = "0.1.0"
