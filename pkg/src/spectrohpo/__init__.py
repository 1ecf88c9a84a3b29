"""Extrapolation-aware hyperparameter search for 1D-CNN spectral regression."""
from .dataset import Dataset, RawSample, generate_synthetic, load_dataset
from .ensemble import EnsembleSpec, PredictionPool, ensemble_predict, simulate_ensemble_sizes, train_ensemble
from .evaluation import EvalReport, export_correlation, final_evaluation, find_lower_bound
from .hpo import HpoRun, SearchSpace, TPEParams, run_hpo, tpe_suggest
from .nnet import CNN_B, HyperConfig, TrainSchedule, predict, train
from .splits import SplitSpec, make_split, split_dataset

__version__ = "0.1.0"

__all__ = [
    "Dataset", "RawSample", "generate_synthetic", "load_dataset",
    "EnsembleSpec", "PredictionPool", "ensemble_predict", "simulate_ensemble_sizes", "train_ensemble",
    "EvalReport", "export_correlation", "final_evaluation", "find_lower_bound",
    "HpoRun", "SearchSpace", "TPEParams", "run_hpo", "tpe_suggest",
    "CNN_B", "HyperConfig", "TrainSchedule", "predict", "train",
    "SplitSpec", "make_split", "split_dataset",
]
