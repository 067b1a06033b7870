"""Model-wise automatic rank selection for low-rank-decomposed networks."""

from .model import LayerSpec, NetworkModel, load_model, save_model
from .cost import build_cost_model, layer_ops, layer_params, max_rank, total_cost
from .lowrank import decompose, svd
from .accuracy import AccuracyModel, EvalPoint, fit_accuracy_model
from .search import (RejectionFrontier, SearchConfig, SearchTrace,
                     run_stage1, run_stage2)

__version__ = "0.1.0"

__all__ = [
    "LayerSpec", "NetworkModel", "load_model", "save_model",
    "build_cost_model", "layer_params", "layer_ops", "max_rank", "total_cost",
    "svd", "decompose",
    "AccuracyModel", "EvalPoint", "fit_accuracy_model",
    "RejectionFrontier", "SearchConfig", "SearchTrace",
    "run_stage1", "run_stage2",
]
