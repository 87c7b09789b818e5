"""Numerical core: attention math, transformer blocks, optimizer schedule, tensor persistence."""

from .functional import causal_mask, grad_check, scaled_dot_attention, softmax
from .io import load_module_state, load_tensors, save_module, save_tensors
from .layers import (
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    MultiHeadAttention,
    PositionalEncoding,
    padding_mask,
    sinusoidal_table,
    xavier_init_,
)
from .optim import OptimizerState, adam_step, build_optimizer, lr_at

__all__ = [
    "causal_mask",
    "grad_check",
    "scaled_dot_attention",
    "softmax",
    "load_module_state",
    "load_tensors",
    "save_module",
    "save_tensors",
    "DecoderLayer",
    "EncoderLayer",
    "FeedForward",
    "MultiHeadAttention",
    "PositionalEncoding",
    "padding_mask",
    "sinusoidal_table",
    "xavier_init_",
    "OptimizerState",
    "adam_step",
    "build_optimizer",
    "lr_at",
]
