"""Shared transformer encoder blocks (pre-norm, multi-head self-attention).

The body-language encoder and the gesture-attention module use the same
architecture with separate parameters. Pre-norm blocks train stably from
scratch without a warmup schedule, which matters at desk scale. Attention
weights can be returned for heatmap dumps, which is why this is a small
custom stack rather than ``nn.TransformerEncoder``.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn


class NonFiniteError(RuntimeError):
    """A forward pass produced NaN/Inf activations."""


def check_finite(x: Tensor, where: str) -> Tensor:
    if not torch.isfinite(x).all():
        bad = (~torch.isfinite(x)).sum().item()
        raise NonFiniteError(f"{where}: {bad} non-finite values (shape {tuple(x.shape)})")
    return x


class EncoderBlock(nn.Module):
    def __init__(self, channels: int, heads: int, ff_mult: int = 4, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True, dropout=dropout)
        self.norm1 = nn.LayerNorm(channels)
        self.norm2 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, ff_mult * channels),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ff_mult * channels, channels),
        )

    def forward(self, x: Tensor, need_weights: bool = False):
        normed = self.norm1(x)
        attn_out, weights = self.attn(normed, normed, normed, need_weights=need_weights)
        x = x + attn_out
        x = x + self.ff(self.norm2(x))
        return x, weights


class TokenEncoder(nn.Module):
    """A stack of pre-norm encoder blocks over (B, N, C) token sequences."""

    def __init__(self, layers: int, channels: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(channels, heads, dropout=dropout) for _ in range(layers)
        )

    def forward(self, x: Tensor, need_weights: bool = False):
        """Returns (states, last_layer_attention or None)."""
        weights = None
        for i, block in enumerate(self.blocks):
            last = need_weights and i == len(self.blocks) - 1
            x, w = block(x, need_weights=last)
            if last:
                weights = w
        return x, weights
