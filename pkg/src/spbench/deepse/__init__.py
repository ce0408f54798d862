"""Toy-scale Deep-SE story-point regressor."""
from .gradcheck import gradient_check
from .model import DeepSE, DeepSEConfig, LanguageModel, RecurrentHighway
from .training import (
    EarlyStopping,
    EpochRecord,
    TrainedModel,
    TrainingDivergedError,
    lm_next_token_accuracy,
    load_checkpoint,
    predict_deepse,
    pretrain_lm,
    save_checkpoint,
    fit,
    train,
    write_trace_csv,
)
from .vocab import OOV, PAD, Vocab, build_vocab, encode, tokenize

__all__ = [
    "DeepSE",
    "DeepSEConfig",
    "EarlyStopping",
    "EpochRecord",
    "LanguageModel",
    "OOV",
    "PAD",
    "RecurrentHighway",
    "TrainedModel",
    "TrainingDivergedError",
    "Vocab",
    "build_vocab",
    "encode",
    "gradient_check",
    "lm_next_token_accuracy",
    "load_checkpoint",
    "predict_deepse",
    "pretrain_lm",
    "save_checkpoint",
    "tokenize",
    "fit",
    "train",
    "write_trace_csv",
]
