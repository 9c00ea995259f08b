"""Early and late fusion neural news recommenders on MIND"""
from .config import ExperimentConfig, ModelConfig, Variant, load_config
from .fusion import FusionMode, score_early, score_late
from .metrics import auc, count_parameters, evaluate_run, mrr, ndcg_at_k
from .mind import load_dataset
from .model import Recommender, build_model
from .objectives import Objective, ce_ns_loss, scl_loss
from .runner import Trainer, run_evaluation, run_training


__all__ = [
    "ExperimentConfig", "FusionMode", "ModelConfig", "Objective",
    "Recommender", "Trainer", "Variant",
    "auc", "build_model", "ce_ns_loss", "count_parameters", "evaluate_run",
    "load_config", "load_dataset", "mrr", "ndcg_at_k", "run_evaluation",
    "run_training", "scl_loss", "score_early", "score_late",
]
__version__ = "0.1.0"
