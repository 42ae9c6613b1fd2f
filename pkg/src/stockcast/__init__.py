"""stockcast: deep forecasting with entity embeddings and temporal conv/LSTM modules."""

from .analysis import extract_embeddings, nearest_neighbors, pca
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .metrics import compute_metrics
from .models import ModelSpec, build_model, transfer_pretrained
from .synthetic import SyntheticConfig, gen_synthetic
from .training import TrainParams, run_protocol

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ModelSpec",
    "RunConfig",
    "SyntheticConfig",
    "TrainParams",
    "build_model",
    "compute_metrics",
    "extract_embeddings",
    "gen_synthetic",
    "load_checkpoint",
    "load_config",
    "nearest_neighbors",
    "pca",
    "run_protocol",
    "save_checkpoint",
    "transfer_pretrained",
    "__version__",
]
