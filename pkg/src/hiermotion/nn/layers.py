from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


def sinusoidal_embed(t: int, dim: int) -> np.ndarray:
    """Interleaved ``[sin(t w_0), cos(t w_0), sin(t w_1), ...]`` with
    ``w_i = 10000^(-2i/dim)``."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(t * freqs)
    out[1::2] = np.cos(t * freqs)
    return out


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Batched :func:`sinusoidal_embed` for an integer tensor ``t`` of shape (B,)."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    freqs = 10000.0 ** (-2.0 * torch.arange(dim // 2, dtype=torch.float64) / dim)
    ang = t.to(torch.float64)[:, None] * freqs[None]
    out = torch.stack([torch.sin(ang), torch.cos(ang)], -1).reshape(len(t), dim)
    return out


def attention_forward(q, k, v, mask=None, return_weights: bool = False):
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d)) v``.

    ``mask`` is boolean, True where attention is allowed, broadcastable to
    ``(..., Lq, Lk)``. Fully masked rows produce zero output.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"incompatible attention shapes {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
        any_allowed = mask.any(-1, keepdim=True)
        scores = torch.where(any_allowed, scores, torch.zeros_like(scores))
    weights = torch.softmax(scores, dim=-1)
    if mask is not None:
        weights = torch.where(any_allowed, weights, torch.zeros_like(weights))
    out = weights @ v
    return (out, weights) if return_weights else out


def causal_mask(n: int) -> torch.Tensor:
    return torch.tril(torch.ones(n, n, dtype=torch.bool))


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, mask=None):
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        if mask is not None and mask.dim() == 3:
            mask = mask[:, None]
        y = attention_forward(q, k, v, mask)
        return self.out(y.transpose(1, 2).reshape(b, n, d))


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(nn.functional.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with residual connections."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 2, causal: bool = False):
        super().__init__()
        self.causal = causal
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult * dim)

    def forward(self, x, mask=None):
        if self.causal:
            cm = causal_mask(x.shape[1]).to(x.device)
            mask = cm if mask is None else (mask & cm)
        x = x + self.attn(self.norm1(x), mask)
        return x + self.ff(self.norm2(x))


def mlp(sizes, final_act: bool = False) -> nn.Sequential:
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2 or final_act:
            layers.append(nn.GELU())
    return nn.Sequential(*layers)


class Standardizer(nn.Module):
    """Fixed per-feature affine normalization stored as buffers."""

    def __init__(self, dim: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(dim))
        self.register_buffer("std", torch.ones(dim))

    def fit(self, data, min_std: float = 1e-2) -> Standardizer:
        a = np.asarray(data, dtype=np.float64).reshape(-1, self.mean.shape[0])
        std = a.std(axis=0)
        self.mean.copy_(torch.from_numpy(a.mean(axis=0)))
        self.std.copy_(torch.from_numpy(np.where(std < min_std, 1.0, std)))
        return self

    def forward(self, x):
        return (x - self.mean) / self.std

    def inverse(self, x):
        return x * self.std + self.mean
