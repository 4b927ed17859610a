from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    ModelConfig,
    ModelParams,
    Trainer,
    TransformerEstimator,
    check_gradients,
    forward,
    forward_all,
    init_params,
    train_step,
)
from .ngram import NgramEstimator
from .objective import weighted_nll
from .sampling import SamplerConfig, generate, generate_parallel, nucleus_filter, sample_token

__all__ = [
    "ModelConfig",
    "ModelParams",
    "NgramEstimator",
    "SamplerConfig",
    "Trainer",
    "TransformerEstimator",
    "check_gradients",
    "forward",
    "forward_all",
    "generate",
    "generate_parallel",
    "init_params",
    "load_checkpoint",
    "nucleus_filter",
    "sample_token",
    "save_checkpoint",
    "train_step",
    "weighted_nll",
]
