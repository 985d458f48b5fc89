"""Block score predictor: per-block cosine regressors used to rank MoE blocks."""

from .bsp import (
    BlockParams,
    BlockPredictor,
    BlockScorePredictor,
    PredictorConfig,
    loss_and_grad,
    plan_predicted_blocks,
    predict_block_scores,
    spearman,
    train_block_predictor,
)
from .container import dumps_predictor, load_predictor, loads_predictor, save_predictor

__all__ = [
    "BlockParams",
    "BlockPredictor",
    "BlockScorePredictor",
    "PredictorConfig",
    "dumps_predictor",
    "load_predictor",
    "loads_predictor",
    "loss_and_grad",
    "plan_predicted_blocks",
    "predict_block_scores",
    "save_predictor",
    "spearman",
    "train_block_predictor",
]
