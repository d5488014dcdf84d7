"""Minimal neural compute core: layers with analytic backward passes, a
parameter store, AdamW updates, and finite-difference gradient checking."""

from .gradcheck import GradCheckReport, gradient_check
from .layers import (
    BiLstm,
    CharCNN,
    Dropout,
    EmbeddingTable,
    Linear,
    MultiHeadAttention,
    dropout_apply,
    softmax_rows,
)
from .optim import AdamOptimizer
from .params import ParamStore, uniform_init

__all__ = [
    "AdamOptimizer",
    "BiLstm",
    "CharCNN",
    "Dropout",
    "EmbeddingTable",
    "GradCheckReport",
    "Linear",
    "MultiHeadAttention",
    "ParamStore",
    "dropout_apply",
    "gradient_check",
    "softmax_rows",
    "uniform_init",
]
