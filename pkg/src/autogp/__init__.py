"""Deep autoregressive Gaussian-process forecasting with learned kernel structure."""
from .data import Metrics, SplitSpec, TimeSeriesMatrix, load_csv, metrics, save_csv, split, synth
from .forecaster import (SearchSpec, TrainedModel, WindowConfig, evaluate, evaluate_persistence, load_model,
                         make_windows, predict, save_model, train)
from .kernel_expr import discretize, format_expr, parse_expr
from .kernel_search import SearchBudget, greedy_search, kas_search, retrain_zeta
from .kernels import BasicKernelKind
from .model import AutoGPModel, DivergenceError, ModelConfig, OptimConfig

__version__ = "0.1.0"

__all__ = [
    "AutoGPModel", "BasicKernelKind", "DivergenceError", "Metrics", "ModelConfig", "OptimConfig",
    "SearchBudget", "SearchSpec", "SplitSpec", "TimeSeriesMatrix", "TrainedModel", "WindowConfig",
    "discretize", "evaluate", "evaluate_persistence", "format_expr", "greedy_search", "kas_search",
    "load_csv", "load_model", "make_windows", "metrics", "parse_expr", "predict", "retrain_zeta",
    "save_csv", "save_model", "split", "synth", "train",
]
