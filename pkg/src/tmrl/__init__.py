"""Matryoshka sentence embeddings with a dedicated temporal prefix subspace."""

from .config import VERSION as __version__
from .config import RunConfig, load_config
from .encoder import EncoderConfig, PoolingMode, TMRLModel, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    EmptyTemporalError,
    InputFormatError,
    NumericError,
    TMRLError,
    TrainingError,
    TransportError,
)
from .losses import ContrastiveBatch, LossConfig, tmrl_total
from .retrieval_eval import EmbeddingStore, matryoshka_sweep, ndcg_at_k, recall_at_k, search
from .trainer import TrainConfig, train

__all__ = [
    "ConfigError", "ContrastiveBatch", "DegenerateInputError", "DimensionError", "EmbeddingStore",
    "EmptyTemporalError", "EncoderConfig", "InputFormatError", "LossConfig", "NumericError", "PoolingMode",
    "RunConfig", "TMRLError", "TMRLModel", "TrainConfig", "TrainingError", "TransportError", "__version__",
    "load_checkpoint", "load_config", "matryoshka_sweep", "ndcg_at_k", "recall_at_k", "save_checkpoint",
    "search", "tmrl_total", "train",
]
