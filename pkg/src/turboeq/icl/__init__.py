"""In-context-learning soft equalizer: prompt tokenization, Transformer and
selective state-space backbones, multi-head classifier, and cached inference."""

from .tokens import PromptTokens, token_dim, tokenize_inference, tokenize_training
from .model import IclConfig, IclModel, ContextCache, init_params

__all__ = [
    "PromptTokens",
    "token_dim",
    "tokenize_inference",
    "tokenize_training",
    "IclConfig",
    "IclModel",
    "ContextCache",
    "init_params",
]
