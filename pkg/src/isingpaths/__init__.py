"""Autoregressive models of Ising configurations under different lattice paths."""

from .exact import enumerate_states, exact_entropy, exact_observables, model_kld
from .ising import ThermalParams, critical_beta, sample_dataset
from .models import build_model, generate, load_checkpoint, save_checkpoint, sequence_nll
from .paths import PathOrdering, inverse_map, locality_metrics, make_path
from .training import TrainConfig, TrainingTrace, anisotropy_score, model_correlation, train

__version__ = "0.1.0"

__all__ = [
    "PathOrdering", "TrainConfig", "ThermalParams", "TrainingTrace", "anisotropy_score",
    "build_model", "critical_beta", "enumerate_states", "exact_entropy", "exact_observables",
    "generate", "inverse_map", "load_checkpoint", "locality_metrics", "make_path",
    "model_correlation", "model_kld", "sample_dataset", "save_checkpoint", "sequence_nll", "train",
]
