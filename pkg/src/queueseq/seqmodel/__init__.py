"""Transformer sequence model over event tables."""

from .config import ConfigError, ModelConfig, TrainConfig
from .generate import generate, generate_batch, generate_many
from .model import SeqModel, grad, grad_check, positional_encoding, toy_linear_config
from .tokens import PAD, Batch, CapacityExceeded, TokenSequence, collate, decode, encode_trajectory
from .train import DivergenceDetected, TrainState, lr_at, train

__all__ = [
    "PAD", "Batch", "CapacityExceeded", "ConfigError", "DivergenceDetected", "ModelConfig", "SeqModel",
    "TokenSequence", "TrainConfig", "TrainState", "collate", "decode", "encode_trajectory", "generate",
    "generate_batch", "generate_many", "grad", "grad_check", "lr_at", "positional_encoding",
    "toy_linear_config", "train",
]
