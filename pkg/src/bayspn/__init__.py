"""Bayesian structure and parameter learning for sum-product networks."""
__version__ = "0.1.0"

from .region_graph import ConfigError, GraphConfig, RegionGraph, build_region_graph, validate_region_graph
from .scope import ScopeAssignment, ScopeTable, induced_scope, sample_scope_prior, validate_scope
from .leaves import Bernoulli, Categorical, ColumnFamilies, EvaluationError, Gaussian, SuffStats
from .layout import RegionLayout, compile_layout
from .spn import InstanceView, SpnGraph, build_spn, log_density, log_evaluate
from .encoding import EncodedData, encode
from .posterior import (PosteriorChain, Snapshot, assemble_predictive_spn, model_score,
                        predictive_log_likelihood, predictive_log_likelihoods)
from .gibbs import PRESETS, ChainError, GibbsState, TrainConfig, run_chain
from .dp import DpChain, DpConfig, dp_predictive, run_dp_chain
from .datasets import Dataset, DataError, apply_mcar, load_csv, write_csv

__all__ = [
    "ConfigError", "GraphConfig", "RegionGraph", "build_region_graph", "validate_region_graph",
    "ScopeAssignment", "ScopeTable", "induced_scope", "sample_scope_prior", "validate_scope",
    "Bernoulli", "Categorical", "ColumnFamilies", "EvaluationError", "Gaussian", "SuffStats",
    "RegionLayout", "compile_layout", "InstanceView", "SpnGraph", "build_spn", "log_density",
    "log_evaluate", "EncodedData", "encode", "PosteriorChain", "Snapshot", "assemble_predictive_spn",
    "model_score", "predictive_log_likelihood", "predictive_log_likelihoods", "PRESETS", "ChainError",
    "GibbsState", "TrainConfig", "run_chain", "DpChain", "DpConfig", "dp_predictive", "run_dp_chain",
    "Dataset", "DataError", "apply_mcar", "load_csv", "write_csv",
]
