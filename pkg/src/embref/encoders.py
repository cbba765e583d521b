"""Perception providers: visual / gesture / language encoders and the fusion conv.

Each provider is registered by (domain, name) with a declared output shape so
implementations stay swappable — the trainable toys here, ground-truth
passthroughs for depth and segmentation, and (later) adapters for pretrained
backbones all satisfy the same contracts.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn


class ShapeContractError(ValueError):
    pass


class ProviderError(ValueError):
    pass


def avg_pool_plane(x: Tensor, factor: int) -> Tensor:
    """Exact non-overlapping mean pooling of a (..., H, W) grid."""
    h, w = x.shape[-2], x.shape[-1]
    if h % factor or w % factor:
        raise ShapeContractError(f"grid {h}x{w} not divisible by pool factor {factor}")
    shape = x.shape[:-2] + (h // factor, factor, w // factor, factor)
    return x.reshape(shape).mean(dim=(-3, -1))


def avg_pool_channels_last(x: Tensor, factor: int) -> Tensor:
    """Same pooling for channel-last (..., H, W, C) maps."""
    return avg_pool_plane(x.movedim(-1, -3), factor).movedim(-3, -1)


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
        nn.GroupNorm(min(8, c_out), c_out),
        nn.ReLU(),
    )


class VisualEncoder(nn.Module):
    """Four stride-2 conv blocks: (B, 3, S, S) -> (B, C, S/16, S/16)."""

    domain = "visual"
    name = "toy_conv"
    version = 1

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        self.blocks = nn.Sequential(
            _conv_block(3, max(8, c // 4)),
            _conv_block(max(8, c // 4), max(8, c // 2)),
            _conv_block(max(8, c // 2), c),
            _conv_block(c, c),
        )
        self.channels = channels

    @staticmethod
    def output_shape(cfg) -> tuple[int, int, int]:
        return (cfg.channels, cfg.h, cfg.w)

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeContractError(f"expected (B, 3, H, W) image, got {tuple(image.shape)}")
        return self.blocks(image)


class GesturePool(nn.Module):
    """Mean-preserving downsample of the gesture field to the feature grid."""

    domain = "gesture"
    name = "avg_pool"
    version = 1

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    @staticmethod
    def output_shape(cfg) -> tuple[int, int, int]:
        return (3, cfg.h, cfg.w)

    def forward(self, field: Tensor) -> Tensor:
        if field.ndim != 4 or field.shape[1] != 3:
            raise ShapeContractError(f"expected (B, 3, H, W) field, got {tuple(field.shape)}")
        return avg_pool_plane(field, self.factor)


class LanguageEncoder(nn.Module):
    """Token embeddings plus position embeddings through a two-layer mixer.

    Stands in for a pretrained sentence encoder; the position table is what
    makes the output order-sensitive.
    """

    domain = "language"
    name = "embed_mixer"
    version = 1

    def __init__(self, vocab_size: int, channels: int, max_tokens: int = 16):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, channels)
        self.pos = nn.Parameter(torch.zeros(max_tokens, channels))
        nn.init.normal_(self.pos, std=0.02)
        self.mixer = nn.Sequential(
            nn.Linear(channels, channels),
            nn.ReLU(),
            nn.Linear(channels, channels),
        )

    @staticmethod
    def output_shape(cfg) -> tuple[int]:
        return (cfg.channels,)

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 2:
            raise ShapeContractError(f"expected (B, T) token ids, got {tuple(tokens.shape)}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ProviderError(
                f"token id outside vocabulary of size {self.vocab_size}: "
                f"range [{int(tokens.min())}, {int(tokens.max())}]"
            )
        t = tokens.shape[1]
        if t > self.pos.shape[0]:
            raise ShapeContractError(f"sequence length {t} exceeds max_tokens {self.pos.shape[0]}")
        x = self.embed(tokens) + self.pos[:t]
        return self.mixer(x)


class FixtureDepth:
    """Ground-truth passthrough depth provider."""

    domain = "depth"
    name = "fixture_gt"
    version = 1

    def __init__(self, image_size: int):
        self.image_size = image_size

    @staticmethod
    def output_shape(cfg) -> tuple[int, int]:
        return (cfg.image_size, cfg.image_size)

    def __call__(self, batch: dict) -> Tensor:
        return batch["depth"]


class FixtureSegmentation:
    """Ground-truth passthrough sender-mask provider."""

    domain = "segmentation"
    name = "fixture_gt"
    version = 1

    def __init__(self, image_size: int):
        self.image_size = image_size

    @staticmethod
    def output_shape(cfg) -> tuple[int, int]:
        return (cfg.image_size, cfg.image_size)

    def __call__(self, batch: dict) -> Tensor:
        return batch["sender_mask"]


class MultimodalFusion(nn.Module):
    """1x1 convolution over [visual; gesture; pooled coordinates] -> fused map."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels + 6, channels, 1)
        self.in_channels = channels + 6

    def forward(self, visual: Tensor, gesture: Tensor, coords_pooled: Tensor) -> Tensor:
        """coords_pooled is channel-last (B, H, W, 3) from the geometry module."""
        coords = coords_pooled.permute(0, 3, 1, 2)
        stacked = torch.cat([visual, gesture, coords], dim=1)
        if stacked.shape[1] != self.in_channels:
            raise ShapeContractError(
                f"fusion expects {self.in_channels} input channels, got {stacked.shape[1]}"
            )
        return self.conv(stacked)


PROVIDERS = {
    "visual": {"toy_conv": VisualEncoder},
    "gesture": {"avg_pool": GesturePool},
    "language": {"embed_mixer": LanguageEncoder},
    "depth": {"fixture_gt": FixtureDepth},
    "segmentation": {"fixture_gt": FixtureSegmentation},
}


def provider_class(domain: str, name: str):
    try:
        return PROVIDERS[domain][name]
    except KeyError:
        raise ProviderError(f"no provider {name!r} registered for domain {domain!r}") from None


def expected_shapes(cfg) -> dict[str, tuple]:
    return {
        "visual": (cfg.channels, cfg.h, cfg.w),
        "gesture": (3, cfg.h, cfg.w),
        "language": (cfg.channels,),
        "depth": (cfg.image_size, cfg.image_size),
        "segmentation": (cfg.image_size, cfg.image_size),
    }


def validate_registry(cfg) -> None:
    """Check every configured provider's declared shape against the config."""
    names = {
        "visual": cfg.visual_provider,
        "gesture": cfg.gesture_provider,
        "language": cfg.language_provider,
        "depth": cfg.depth_provider,
        "segmentation": cfg.segmentation_provider,
    }
    expect = expected_shapes(cfg)
    for domain, name in names.items():
        declared = provider_class(domain, name).output_shape(cfg)
        if tuple(declared) != tuple(expect[domain]):
            raise ShapeContractError(
                f"provider {domain}/{name} declares shape {declared}, "
                f"config expects {expect[domain]}"
            )
