"""Relation reasoning from the sender's perspective.

Four stages: a per-pixel cosine map between the body direction and each
pixel's sender-centered coordinate (where does the sender face), a gated
transformer that turns those regions into a probability map over feature
cells (what does the sender point at), language-conditioned FiLM rounds over
the gated fused map (what do the words describe), and an anchor-box head over
the concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .encoders import ShapeContractError, avg_pool_plane
from .layers import TokenEncoder, check_finite

_ZERO_NORM = 1e-8


def spatial_attention(direction: Tensor, coords: Tensor) -> Tensor:
    """Cosine between the body direction and each pixel's embodied coordinate.

    Args:
        direction: (B, 3) unit vectors.
        coords: (B, H, W, 3) sender-centered coordinate map.

    Returns:
        (B, H, W) scores in [-1, 1]; pixels with near-zero coordinate norm
        (the sender's own location) score 0.
    """
    if coords.shape[-1] != 3:
        raise ShapeContractError(f"coords must be (..., 3), got {tuple(coords.shape)}")
    dots = (coords * direction[:, None, None, :]).sum(-1)
    norms = coords.norm(dim=-1)
    safe = norms.clamp_min(_ZERO_NORM)
    return torch.where(norms < _ZERO_NORM, torch.zeros_like(dots), dots / safe)


def pooled_gate(source: Tensor, factor: int) -> Tensor:
    """ReLU of the average-pooled gate source; broadcastable over channels."""
    return torch.relu(avg_pool_plane(source, factor))


class GestureAttention(nn.Module):
    """Attention over feature cells for the region the sender points to.

    The fused map is gated by ReLU(AvgPool(sender mask + facing map)), run
    through a transformer encoder, and each output token is projected to a
    scalar; a softmax over cells yields a probability map.
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
        if pos_embed == "learned":
            self.pos_embed = nn.Parameter(torch.zeros(h * w, channels))
            nn.init.normal_(self.pos_embed, std=0.02)
        else:
            self.pos_embed = None
        self.encoder = TokenEncoder(layers, channels, heads, dropout=dropout)
        self.score = nn.Linear(channels, 1)

    def forward(
        self,
        fused: Tensor,
        sender_mask: Tensor,
        facing: Tensor,
        factor: int,
        exclude_sender: bool = False,
    ) -> tuple[Tensor, Tensor]:
        b, c, h, w = fused.shape
        if (h, w) != self.grid_hw:
            raise ShapeContractError(f"expected grid {self.grid_hw}, got {(h, w)}")
        source = facing if exclude_sender else sender_mask.to(fused.dtype) + facing
        gate = pooled_gate(source, factor)
        gated = fused * gate[:, None]
        tokens = gated.flatten(2).transpose(1, 2)
        if self.pos_embed is not None:
            tokens = tokens + self.pos_embed
        states, _ = self.encoder(tokens)
        check_finite(states, "gesture-attention encoder states")
        scores = self.score(states).squeeze(-1)               # (B, H*W)
        attn = torch.softmax(scores, dim=1).reshape(b, h, w)
        return gated, attn


@dataclass
class SubQueryState:
    """Per-round word attentions, pooled queries, and round feature maps."""

    word_attention: Tensor        # (B, rounds, T), rows sum to 1
    queries: Tensor               # (B, rounds, C)
    round_features: list[Tensor]  # rounds x (B, C, H, W)


class SubQueryFiLM(nn.Module):
    """Stacked FiLM rounds driven by a per-round word attention.

    Round r scores each word by a bilinear compatibility with a learned state
    vector, pools a query from the word features, maps it to a (scale, shift)
    pair, and applies a rectified residual modulation to the feature map.
    """

    def __init__(self, channels: int, rounds: int = 3):
        super().__init__()
        self.rounds = rounds
        self.compat = nn.ModuleList(
            nn.Linear(channels, channels, bias=False) for _ in range(rounds)
        )
        self.state = nn.Parameter(torch.zeros(rounds, channels))
        nn.init.normal_(self.state, std=0.2)
        self.scale = nn.ModuleList(nn.Linear(channels, channels) for _ in range(rounds))
        self.shift = nn.ModuleList(nn.Linear(channels, channels) for _ in range(rounds))
        for lin in list(self.scale) + list(self.shift):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, fused: Tensor, gate: Tensor | None, words: Tensor):
        """fused (B, C, H, W); gate (B, H, W) or None; words (B, T, C)."""
        if words.ndim != 3 or words.shape[1] == 0:
            raise ShapeContractError(f"need at least one word feature, got {tuple(words.shape)}")
        feats = fused if gate is None else fused * gate[:, None]
        attentions, queries, round_features = [], [], []
        for r in range(self.rounds):
            scores = torch.einsum("btc,c->bt", self.compat[r](words), self.state[r])
            attn = torch.softmax(scores, dim=1)
            query = torch.einsum("bt,btc->bc", attn, words)
            gamma = 1.0 + self.scale[r](query)
            beta = self.shift[r](query)
            feats = feats + torch.relu(gamma[:, :, None, None] * feats + beta[:, :, None, None])
            attentions.append(attn)
            queries.append(query)
            round_features.append(feats)
        state = SubQueryState(
            word_attention=torch.stack(attentions, dim=1),
            queries=torch.stack(queries, dim=1),
            round_features=round_features,
        )
        return feats, state


class DetectionHead(nn.Module):
    """Three conv blocks emitting (tx, ty, tw, th, objectness) per anchor."""

    def __init__(self, channels: int, num_anchors: int, with_attention_channel: bool):
        super().__init__()
        c_in = channels + (1 if with_attention_channel else 0)
        self.with_attention_channel = with_attention_channel
        self.num_anchors = num_anchors
        self.blocks = nn.Sequential(
            nn.Conv2d(c_in, channels, 3, padding=1),
            nn.GroupNorm(min(8, channels), channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GroupNorm(min(8, channels), channels),
            nn.ReLU(),
        )
        self.out = nn.Conv2d(channels, num_anchors * 5, 1)
        # bias objectness toward "background" so early training is not swamped
        # by hundreds of confident false positives
        with torch.no_grad():
            self.out.bias.reshape(num_anchors, 5)[:, 4].fill_(-4.0)

    def forward(self, verbal: Tensor, attention: Tensor | None) -> Tensor:
        if self.with_attention_channel:
            if attention is None:
                raise ShapeContractError("head was built with an attention channel")
            x = torch.cat([verbal, attention[:, None]], dim=1)
        else:
            if attention is not None:
                raise ShapeContractError("head was built without an attention channel")
            x = verbal
        return self.out(self.blocks(x))


@dataclass
class DetectionOutput:
    """Raw offsets/logits plus decoded boxes (x, y = col, row pixel units)."""

    raw: Tensor         # (B, A*5, H, W)
    boxes: Tensor       # (B, H, W, A, 4)
    confidence: Tensor  # (B, H, W, A)

    def top1(self) -> tuple[Tensor, Tensor]:
        """Highest-confidence box per sample: ((B, 4), (B,))."""
        b = self.confidence.shape[0]
        flat_conf = self.confidence.reshape(b, -1)
        idx = flat_conf.argmax(dim=1)
        flat_boxes = self.boxes.reshape(b, -1, 4)
        return flat_boxes[torch.arange(b), idx], flat_conf[torch.arange(b), idx]


def decode_detections(raw: Tensor, anchors: np.ndarray, stride: int, image_size: int) -> DetectionOutput:
    """Standard anchor decoding: sigmoid center offsets, exponential sizes."""
    b, ch, h, w = raw.shape
    num_anchors = anchors.shape[0]
    if ch != num_anchors * 5:
        raise ShapeContractError(f"raw has {ch} channels, expected {num_anchors * 5}")
    r = raw.reshape(b, num_anchors, 5, h, w)
    tx, ty, tw, th, obj = r[:, :, 0], r[:, :, 1], r[:, :, 2], r[:, :, 3], r[:, :, 4]
    cols = torch.arange(w, dtype=raw.dtype, device=raw.device)
    rows = torch.arange(h, dtype=raw.dtype, device=raw.device)
    cx = (cols[None, None, None, :] + torch.sigmoid(tx)) * stride
    cy = (rows[None, None, :, None] + torch.sigmoid(ty)) * stride
    anchor_w = torch.as_tensor(anchors[:, 0], dtype=raw.dtype, device=raw.device)
    anchor_h = torch.as_tensor(anchors[:, 1], dtype=raw.dtype, device=raw.device)
    bw = anchor_w[None, :, None, None] * torch.exp(tw.clamp(-8, 8))
    bh = anchor_h[None, :, None, None] * torch.exp(th.clamp(-8, 8))
    # boxes may extend past the frame; IoU and rendering cope, while clipping
    # here would drag decoded centers out of their source cells
    boxes = torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=-1)
    conf = torch.sigmoid(obj)
    return DetectionOutput(
        raw=raw,
        boxes=boxes.permute(0, 2, 3, 1, 4),
        confidence=conf.permute(0, 2, 3, 1),
    )


def fixed_anchors(image_size: int, rel_sizes) -> np.ndarray:
    """Square anchor priors at the given fractions of the image width."""
    return np.array([[s * image_size, s * image_size] for s in rel_sizes], dtype=np.float64)


def kmeans_anchors(box_sizes: np.ndarray, k: int = 3, iters: int = 50) -> np.ndarray:
    """Lloyd k-means over (w, h) ground-truth box sizes; deterministic init."""
    sizes = np.asarray(box_sizes, dtype=np.float64)
    if sizes.ndim != 2 or sizes.shape[1] != 2 or len(sizes) < k:
        raise ValueError(f"need at least {k} (w, h) rows, got {sizes.shape}")
    area_order = np.argsort(sizes.prod(axis=1))
    centers = sizes[area_order[np.linspace(0, len(sizes) - 1, k).astype(int)]].copy()
    for _ in range(iters):
        d = ((sizes[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        assign = d.argmin(axis=1)
        new = centers.copy()
        for j in range(k):
            members = sizes[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        if np.allclose(new, centers):
            break
        centers = new
    return centers[np.argsort(centers.prod(axis=1))]
