"""The full grounding network: perception, view rotation, relation reasoning.

A forward pass builds the coordinate map from depth, re-origins it at the
sender, fuses visual/gesture/coordinate channels, encodes the body-language
direction, derives facing and pointing attention, fuses the words through
FiLM rounds, and emits anchor boxes. Ablation flags in the config switch each
stage off, degrading gracefully to the 2D baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .body_language import BodyLanguageEncoder, mask_body_features
from .config import RunConfig
from .encoders import (
    FixtureDepth,
    FixtureSegmentation,
    GesturePool,
    LanguageEncoder,
    MultimodalFusion,
    ShapeContractError,
    VisualEncoder,
    avg_pool_channels_last,
    validate_registry,
)
from .geometry import build_coordinate_map, embody, sender_position
from .relation import (
    DetectionHead,
    DetectionOutput,
    GestureAttention,
    SubQueryFiLM,
    SubQueryState,
    decode_detections,
    fixed_anchors,
    pooled_gate,
    spatial_attention,
)


@dataclass
class ModelOutputs:
    coords: Tensor                      # (B, S, S, 3) camera-frame coordinates
    embodied: Tensor                    # (B, S, S, 3) sender-centered (or camera if ablated)
    sender_pos: Tensor | None           # (B, 3)
    fused: Tensor                       # (B, C, H, W)
    body_direction: Tensor | None       # (B, 3) unit
    facing: Tensor | None               # (B, S, S) cosine map
    gesture_gated: Tensor | None        # (B, C, H, W)
    gesture_attention: Tensor | None    # (B, H, W), sums to 1
    verbal: Tensor                      # (B, C, H, W)
    subquery: SubQueryState
    raw: Tensor                         # (B, A*5, H, W)
    detections: DetectionOutput


def collate(samples, dtype=torch.float32) -> dict:
    """Stack SceneSamples into a batch dict of tensors (+ numpy gt boxes)."""
    stack = lambda key: np.stack([getattr(s, key) for s in samples])
    return {
        "image": torch.as_tensor(stack("image"), dtype=dtype).permute(0, 3, 1, 2),
        "depth": torch.as_tensor(stack("depth"), dtype=dtype),
        "sender_mask": torch.as_tensor(stack("sender_mask"), dtype=dtype),
        "gesture_field": torch.as_tensor(stack("gesture_field"), dtype=dtype).permute(0, 3, 1, 2),
        "tokens": torch.as_tensor(stack("tokens"), dtype=torch.int64),
        "gt_box": stack("gt_box"),
        "sample_ids": [s.sample_id for s in samples],
    }


def _check_shape(x: Tensor, expected: tuple, what: str) -> Tensor:
    if tuple(x.shape[1:]) != tuple(expected):
        raise ShapeContractError(f"{what} produced {tuple(x.shape[1:])}, declared {expected}")
    return x


class GroundingModel(nn.Module):
    def __init__(self, cfg: RunConfig, vocab_size: int, anchors: np.ndarray | None = None):
        super().__init__()
        validate_registry(cfg)
        self.cfg = cfg
        self.vocab_size = vocab_size
        c, grid = cfg.channels, (cfg.h, cfg.w)

        self.visual = VisualEncoder(c)
        self.gesture_pool = GesturePool(cfg.stride)
        self.language = LanguageEncoder(vocab_size, c)
        self.depth_provider = FixtureDepth(cfg.image_size)
        self.segmentation_provider = FixtureSegmentation(cfg.image_size)
        self.fusion = MultimodalFusion(c)

        if cfg.use_body_vector:
            self.body = BodyLanguageEncoder(
                c, grid, cfg.transformer_layers, cfg.heads, cfg.pos_embed,
                dropout=cfg.dropout,
            )
        else:
            self.body = None
        if cfg.use_gesture_attention:
            self.gesture_attention = GestureAttention(
                c, grid, cfg.transformer_layers, cfg.heads, cfg.pos_embed,
                dropout=cfg.dropout,
            )
        else:
            self.gesture_attention = None
        self.film = SubQueryFiLM(c, cfg.film_rounds)
        self.head = DetectionHead(c, len(cfg.anchor_rel_sizes),
                                  with_attention_channel=cfg.use_gesture_attention)

        if anchors is None:
            anchors = fixed_anchors(cfg.image_size, cfg.anchor_rel_sizes)
        self.register_buffer("anchor_sizes", torch.as_tensor(anchors, dtype=torch.float64))

    @property
    def anchors(self) -> np.ndarray:
        return self.anchor_sizes.cpu().numpy()

    def provider_info(self) -> dict[str, dict]:
        mods = [self.visual, self.gesture_pool, self.language,
                self.depth_provider, self.segmentation_provider]
        return {m.domain: {"name": m.name, "version": m.version} for m in mods}

    def forward(self, batch: dict, verbal_gated: bool | None = None) -> ModelOutputs:
        cfg = self.cfg
        stride = cfg.stride
        if verbal_gated is None:
            verbal_gated = cfg.use_verbal_attention

        depth = self.depth_provider(batch)
        if not cfg.use_depth:
            depth = torch.zeros_like(depth)
        coords = build_coordinate_map(depth)
        mask = self.segmentation_provider(batch)

        sender_pos = None
        embodied = coords
        if cfg.use_embodied_coords:
            sender_pos = sender_position(coords, mask)
            embodied = embody(coords, sender_pos)

        visual = _check_shape(self.visual(batch["image"]), (cfg.channels, cfg.h, cfg.w), "visual provider")
        gesture = _check_shape(self.gesture_pool(batch["gesture_field"]), (3, cfg.h, cfg.w), "gesture provider")
        fused = self.fusion(visual, gesture, avg_pool_channels_last(embodied, stride))
        words = self.language(batch["tokens"])

        body_direction = facing = None
        if cfg.use_body_vector:
            body_map = mask_body_features(fused, mask, stride)
            body_direction = self.body(body_map)
            # the direction is supervised only by its regression loss; the
            # facing map conditions downstream gates without backfeeding it
            facing = spatial_attention(body_direction.detach(), embodied)

        gesture_gated = gesture_attn = None
        if cfg.use_gesture_attention:
            gesture_gated, gesture_attn = self.gesture_attention(
                fused, mask, facing, stride,
                exclude_sender=cfg.gesture_gate_excludes_sender,
            )

        gate = pooled_gate(facing, stride) if verbal_gated and facing is not None else None
        verbal, subquery = self.film(fused, gate, words)
        raw = self.head(verbal, gesture_attn)
        detections = decode_detections(raw, self.anchors, stride, cfg.image_size)
        return ModelOutputs(
            coords=coords,
            embodied=embodied,
            sender_pos=sender_pos,
            fused=fused,
            body_direction=body_direction,
            facing=facing,
            gesture_gated=gesture_gated,
            gesture_attention=gesture_attn,
            verbal=verbal,
            subquery=subquery,
            raw=raw,
            detections=detections,
        )

    @torch.no_grad()
    def film_confidence(self, batch: dict, gated: bool) -> list[Tensor]:
        """Per-FiLM-round confidence heatmaps (max over anchors), (B, H, W) each."""
        outputs = self.forward(batch, verbal_gated=gated)
        maps = []
        for feats in outputs.subquery.round_features:
            raw = self.head(feats, outputs.gesture_attention)
            det = decode_detections(raw, self.anchors, self.cfg.stride, self.cfg.image_size)
            maps.append(det.confidence.max(dim=-1).values)
        return maps
