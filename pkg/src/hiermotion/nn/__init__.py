"""Minimal neural-network substrate on top of torch tensors and autograd."""

import os

import torch

from .gradcheck import grad_check, grad_check_module
from .layers import (FeedForward, MultiHeadAttention, Standardizer, TransformerBlock,
                     attention_forward, causal_mask, mlp, sinusoidal_embed, timestep_embedding)
from .optim import Adam, AdamState, adam_step


def configure(deterministic: bool = False, threads: int | None = None) -> None:
    """Set torch threading and determinism; ``HIERMOTION_THREADS`` caps threads."""
    env = os.environ.get("HIERMOTION_THREADS")
    if threads is None and env:
        threads = int(env)
    if deterministic:
        threads = 1
        torch.use_deterministic_algorithms(True)
    if threads:
        torch.set_num_threads(max(1, threads))


__all__ = [
    "Adam", "AdamState", "FeedForward", "MultiHeadAttention", "Standardizer", "TransformerBlock",
    "adam_step", "attention_forward", "causal_mask", "configure", "grad_check", "grad_check_module",
    "mlp", "sinusoidal_embed", "timestep_embedding",
]
