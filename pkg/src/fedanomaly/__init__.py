"""Federated split-learning anomaly detection on tabular data.

Edge devices encode rows with a small Transformer, optionally privatise the
features with the Gaussian mechanism, and upload them to a cloud MLP scorer.
Everything is plain numpy with hand-written backward passes.
"""

from .config import ExperimentConfig, SyntheticConfig
from .data import ConfigError, DataError, Dataset, Schema, load_csv, make_split, make_synthetic
from .dp import DpConfig, compute_sigma, privatize
from .encoder import FeatureLearner, encoder_backward, encoder_forward
from .experiment import compare_overhead, run_experiment, sweep
from .metrics import MetricsRecord, UndefinedMetricError, auc_pr, auc_roc
from .protocol import Coordinator, EdgeDevice, NumericDivergence, run_round
from .scorer import MlpScorer, score_forward, scorer_backward

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Coordinator", "DataError", "Dataset", "DpConfig", "EdgeDevice", "ExperimentConfig",
    "FeatureLearner", "MetricsRecord", "MlpScorer", "NumericDivergence", "Schema", "SyntheticConfig",
    "UndefinedMetricError", "auc_pr", "auc_roc", "compare_overhead", "compute_sigma", "encoder_backward",
    "encoder_forward", "load_csv", "make_split", "make_synthetic", "privatize", "run_experiment", "run_round",
    "score_forward", "scorer_backward", "sweep",
]
