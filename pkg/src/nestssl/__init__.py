"""Self-training with neighborhood-based pseudo-label selection."""

from .dataset import Dataset, Example, Task, load_dataset, split_ssl, synth_gaussian, synth_regression
from .estimator import NeSTClassifier, NeSTRegressor
from .predictor import Predictor, PredictorConfig, StudentLossConfig
from .selection import SelectionConfig
from .selftrain import SelfTrainConfig, read_trace, run_self_training, write_trace

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Example",
    "NeSTClassifier",
    "NeSTRegressor",
    "Predictor",
    "PredictorConfig",
    "SelectionConfig",
    "SelfTrainConfig",
    "StudentLossConfig",
    "Task",
    "load_dataset",
    "read_trace",
    "run_self_training",
    "split_ssl",
    "synth_gaussian",
    "synth_regression",
    "write_trace",
]
