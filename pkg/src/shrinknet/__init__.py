"""Sparse neural-network training with jointly learned shrinkage coefficients."""

from .data import (Dataset, corrupt_labels, digits_datasets, gen_class_images,
                   gen_sparse_linear, load_idx)
from .engine import Tensor, backward, recording
from .errors import (ConfigError, DomainError, FormatError, ShapeError,
                     SolverError, TrainingDiverged)
from .models import (Conv, Dense, Model, ModelSpec, build_model,
                     collect_activations, evaluate, lenet5, lenet300, linear,
                     load_checkpoint, mlp, model_inputs, save_checkpoint)
from .optim import OptimConfig, RunRecord, train
from .penalties import PenaltyConfig, penalty_subgrad, penalty_value
from .pruning import (PruneMask, apply_mask, global_mask, lasso_cd, lla,
                      load_mask, save_mask, sparsity_ratio,
                      threshold_for_sparsity, threshold_refit,
                      two_stage_prune, weighted_lasso_cd)
from .theory import LinearInstance, halo_hessian, verify_convexity

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Conv", "Dataset", "Dense", "DomainError", "FormatError",
    "LinearInstance", "Model", "ModelSpec", "OptimConfig", "PenaltyConfig",
    "PruneMask", "RunRecord", "ShapeError", "SolverError", "Tensor",
    "TrainingDiverged", "apply_mask", "backward", "build_model",
    "collect_activations", "corrupt_labels", "digits_datasets", "evaluate",
    "gen_class_images", "gen_sparse_linear", "global_mask", "halo_hessian",
    "lasso_cd", "lenet300", "lenet5", "linear", "lla", "load_checkpoint",
    "load_idx", "load_mask", "mlp", "model_inputs", "penalty_subgrad",
    "penalty_value", "recording", "save_checkpoint", "save_mask",
    "sparsity_ratio", "threshold_for_sparsity", "threshold_refit", "train",
    "two_stage_prune", "verify_convexity", "weighted_lasso_cd",
]
