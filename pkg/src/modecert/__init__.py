"""Anytime-valid certification that a chosen label is the unique mode of a categorical stream."""

__version__ = "0.1.0"

from .core import (
    BudgetSplit,
    CiteParams,
    ConfigurationError,
    CountTable,
    GridSpec,
    InvalidParameterError,
    LabelIndex,
    default_lcb_grid,
    default_pairwise_grid,
    geometric_pairwise_grid,
    load_params,
)
from .certifier import CertifierConfig, CiteCertifier, replay
from .weighted import WCiteCertifier, WeightedObservation, wreplay
from .baselines import MmcCertifier, bonferroni_certify

__all__ = [
    "BudgetSplit", "CiteParams", "ConfigurationError", "CountTable", "GridSpec",
    "InvalidParameterError", "LabelIndex", "default_lcb_grid", "default_pairwise_grid",
    "geometric_pairwise_grid", "load_params", "CertifierConfig", "CiteCertifier", "replay",
    "WCiteCertifier", "WeightedObservation", "wreplay", "MmcCertifier", "bonferroni_certify",
]
