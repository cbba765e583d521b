"""Body-language encoding: from masked sender features to a unit 3-vector.

The fused map is gated by the pooled sender mask, flattened into tokens, and
run through a transformer encoder with a learnable readout token prepended;
a single linear layer plus L2 normalization turns the readout state into the
direction the sender's body and gesture indicate, in sender-centered
coordinates.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .encoders import ShapeContractError, avg_pool_plane
from .layers import TokenEncoder, check_finite

_NORM_EPS = 1e-8


def mask_body_features(fused: Tensor, sender_mask: Tensor, factor: int) -> Tensor:
    """Gate the fused map by the pooled sender mask (broadcast over channels).

    Cells whose source window contains no sender pixel come out exactly zero.
    """
    if fused.ndim != 4:
        raise ShapeContractError(f"expected (B, C, H, W) fused map, got {tuple(fused.shape)}")
    if sender_mask.shape[-2] != fused.shape[-2] * factor:
        raise ShapeContractError(
            f"mask {tuple(sender_mask.shape)} does not pool to {tuple(fused.shape[-2:])} "
            f"with factor {factor}"
        )
    gate = avg_pool_plane(sender_mask.to(fused.dtype), factor)
    return fused * gate[:, None]


class BodyLanguageEncoder(nn.Module):
    """Transformer with a prepended readout token; output is L2-normalized.

    Parameters
    ----------
    channels, grid_hw, layers, heads : architecture sizes
    pos_embed : "learned" adds an absolute position table over the H*W+1
        token slots, "none" disables it.
    """

    def __init__(
        self,
        channels: int,
        grid_hw: tuple[int, int],
        layers: int = 2,
        heads: int = 8,
        pos_embed: str = "learned",
        dropout: float = 0.0,
    ):
        super().__init__()
        h, w = grid_hw
        self.grid_hw = grid_hw
        self.token_count = h * w + 1
        self.body_token = nn.Parameter(torch.zeros(channels))
        nn.init.normal_(self.body_token, std=0.02)
        if pos_embed == "learned":
            self.pos_embed = nn.Parameter(torch.zeros(self.token_count, channels))
            nn.init.normal_(self.pos_embed, std=0.02)
        else:
            self.pos_embed = None
        self.encoder = TokenEncoder(layers, channels, heads, dropout=dropout)
        self.head = nn.Linear(channels, 3)

    def forward(self, body_map: Tensor, return_attention: bool = False):
        """body_map: (B, C, H, W) masked fused features -> (B, 3) unit vectors."""
        b, c, h, w = body_map.shape
        if (h, w) != self.grid_hw:
            raise ShapeContractError(f"expected grid {self.grid_hw}, got {(h, w)}")
        tokens = body_map.flatten(2).transpose(1, 2)           # (B, H*W, C)
        readout = self.body_token.expand(b, 1, c)
        x = torch.cat([readout, tokens], dim=1)
        if self.pos_embed is not None:
            x = x + self.pos_embed
        states, weights = self.encoder(x, need_weights=return_attention)
        check_finite(states, "body-language encoder states")
        raw = self.head(states[:, 0])
        norm = raw.norm(dim=-1, keepdim=True)
        direction = raw / (norm + _NORM_EPS)
        if not return_attention:
            return direction
        # readout row of the last layer's attention, over the H*W map tokens
        attn = weights[:, 0, 1:].reshape(b, h, w)
        return direction, attn
