"""Sender-centered coordinate maps.

Every pixel gets a 3-vector (row/H, col/W, depth); subtracting the sender's
mean coordinate re-origins the map at the sender, so downstream modules can
reason about directions "from the sender" instead of from the camera.

Conventions (pinned by tests):
  * channel 0 = row index / H, channel 1 = col index / W, channel 2 = depth
  * coordinate maps are channel-last ``(..., H, W, 3)``
  * boxes elsewhere in the package use (x=col, y=row) pixel units instead
"""

from __future__ import annotations

import torch
from torch import Tensor


class GeometryError(ValueError):
    """Invalid input to a geometry operation."""


class EmptyMaskError(GeometryError):
    """Sender mask has no pixels; upstream segmentation failed."""


def build_coordinate_map(depth: Tensor) -> Tensor:
    """Stack normalized image coordinates with depth.

    Args:
        depth: ``(..., H, W)`` depth values in [0, 1].

    Returns:
        ``(..., H, W, 3)`` coordinate map; dtype follows ``depth``.
    """
    if depth.ndim < 2:
        raise GeometryError(f"depth must be (..., H, W), got shape {tuple(depth.shape)}")
    if depth.numel() and (depth.min() < 0 or depth.max() > 1):
        raise GeometryError(
            f"depth out of range [0, 1]: min={depth.min():.4g} max={depth.max():.4g}"
        )
    h, w = depth.shape[-2], depth.shape[-1]
    rows = torch.arange(h, dtype=depth.dtype, device=depth.device) / h
    cols = torch.arange(w, dtype=depth.dtype, device=depth.device) / w
    grid = torch.stack(
        [
            rows[:, None].expand(h, w),
            cols[None, :].expand(h, w),
        ],
        dim=-1,
    )
    grid = grid.expand(*depth.shape, 2)
    return torch.cat([grid, depth[..., None]], dim=-1)


def sender_position(coords: Tensor, mask: Tensor) -> Tensor:
    """Mean coordinate over the sender's mask pixels.

    Args:
        coords: ``(..., H, W, 3)`` coordinate map.
        mask: ``(..., H, W)`` binary sender mask.

    Returns:
        ``(..., 3)`` sender position.

    Raises:
        EmptyMaskError: if any mask in the batch has no nonzero pixel.
    """
    if coords.shape[:-1] != mask.shape:
        raise GeometryError(
            f"mask shape {tuple(mask.shape)} does not match coords {tuple(coords.shape)}"
        )
    m = mask.to(coords.dtype)
    counts = m.sum(dim=(-2, -1))
    if (counts == 0).any():
        raise EmptyMaskError("sender mask is empty; refusing to fall back silently")
    total = (coords * m[..., None]).sum(dim=(-3, -2))
    return total / counts[..., None]


def embody(coords: Tensor, origin: Tensor) -> Tensor:
    """Re-origin a coordinate map at ``origin`` (broadcast over pixels)."""
    if coords.shape[-1] != 3 or origin.shape[-1] != 3:
        raise GeometryError("coords and origin must have 3 channels")
    if origin.shape[:-1] != coords.shape[:-3]:
        raise GeometryError(
            f"origin batch shape {tuple(origin.shape[:-1])} does not match "
            f"coords batch shape {tuple(coords.shape[:-3])}"
        )
    return coords - origin[..., None, None, :]
