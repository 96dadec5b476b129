from .checkpoint import load_model, save_model
from .model import GeneratorConfig, MaskedLogits, MaskedTokenModel, predict_masked
from .sampling import (
    MaskSchedule,
    cfg_combine,
    guided_logits,
    iterative_decode,
    mask_ratio,
    masked_count_trajectory,
)
from .training import (
    Adam,
    TrainReport,
    evaluate_loss,
    masked_cross_entropy,
    masked_token_accuracy,
    train_masked,
)

__all__ = [
    "Adam",
    "GeneratorConfig",
    "MaskSchedule",
    "MaskedLogits",
    "MaskedTokenModel",
    "TrainReport",
    "cfg_combine",
    "evaluate_loss",
    "guided_logits",
    "iterative_decode",
    "load_model",
    "mask_ratio",
    "masked_count_trajectory",
    "masked_cross_entropy",
    "masked_token_accuracy",
    "predict_masked",
    "save_model",
    "train_masked",
]
