"""Feature-selection benchmarking for network-flow intrusion detection.

The package compares wrapper searches (bat algorithm, aquila optimizer)
over a correlation-based merit against embedded random-forest importance
ranking, then scores the surviving feature subsets with from-scratch
random forest and neural network classifiers.
"""

from .correlation import CfsScore, CorrelationMatrix, cfs_merit, spearman_matrix
from .dataset import Dataset, RawTable, SplitPair, load_csv, prepare_splits
from .errors import DataError, NumericError, PipelineError
from .metrics import ConfusionMatrix, MetricReport, binary_metrics, confusion, multiclass_metrics
from .neural_net import MlpConfig, MlpModel
from .pipeline import ExperimentConfig, run_pipeline
from .random_forest import ForestConfig, TrainedForest, train_forest
from .subset_search import (
    AquilaConfig,
    BatConfig,
    FeatureSubset,
    SearchResult,
    aquila_run,
    bat_run,
    brute_force_best,
)

__version__ = "0.1.0"

__all__ = [
    "AquilaConfig",
    "BatConfig",
    "CfsScore",
    "ConfusionMatrix",
    "CorrelationMatrix",
    "DataError",
    "Dataset",
    "ExperimentConfig",
    "FeatureSubset",
    "ForestConfig",
    "MetricReport",
    "MlpConfig",
    "MlpModel",
    "NumericError",
    "PipelineError",
    "RawTable",
    "SearchResult",
    "SplitPair",
    "TrainedForest",
    "aquila_run",
    "bat_run",
    "binary_metrics",
    "brute_force_best",
    "cfs_merit",
    "confusion",
    "load_csv",
    "multiclass_metrics",
    "prepare_splits",
    "run_pipeline",
    "spearman_matrix",
    "train_forest",
    "__version__",
]
