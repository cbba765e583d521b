"""Training losses: direction regression, attention coverage, word diversity,
and a single-scale anchor-box detection loss, summed with configurable weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

_DEGENERATE_NORM = 1e-8
_IGNORE_IOU = 0.5
_OFFSET_EPS = 1e-4


class LossError(RuntimeError):
    pass


class DegenerateTargetError(LossError):
    """The target box sits on the sender, so no direction can supervise it."""


class NonFiniteLossError(LossError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is non-finite ({value})")
        self.term = term


@dataclass
class SupervisionTargets:
    """Per-sample supervision derived from the ground-truth box."""

    box_direction: Tensor    # (B, 3) mean embodied coordinate of box pixels
    valid_direction: Tensor  # (B,) bool, False when the box sits on the sender
    box_mask: Tensor         # (B, H, W) {0,1} cells whose center is in the box
    assignment: Tensor       # (B, 3) int64 (row, col, anchor)
    offset_targets: Tensor   # (B, 4) (tx, ty, tw, th)
    ignore: Tensor           # (B, H, W, A) bool, high-IoU negatives to skip


def _anchor_boxes(grid_hw: tuple[int, int], anchors: np.ndarray, stride: int) -> np.ndarray:
    """Template boxes (H, W, A, 4) with each anchor centered in its cell."""
    h, w = grid_hw
    rows = (np.arange(h) + 0.5) * stride
    cols = (np.arange(w) + 0.5) * stride
    cy = np.broadcast_to(rows[:, None, None], (h, w, len(anchors)))
    cx = np.broadcast_to(cols[None, :, None], (h, w, len(anchors)))
    aw = np.broadcast_to(anchors[None, None, :, 0], (h, w, len(anchors)))
    ah = np.broadcast_to(anchors[None, None, :, 1], (h, w, len(anchors)))
    return np.stack([cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2], axis=-1)


def _iou_grid(templates: np.ndarray, box: np.ndarray) -> np.ndarray:
    ix = np.clip(
        np.minimum(templates[..., 2], box[2]) - np.maximum(templates[..., 0], box[0]),
        0, None,
    )
    iy = np.clip(
        np.minimum(templates[..., 3], box[3]) - np.maximum(templates[..., 1], box[1]),
        0, None,
    )
    inter = ix * iy
    area_t = (templates[..., 2] - templates[..., 0]) * (templates[..., 3] - templates[..., 1])
    area_b = (box[2] - box[0]) * (box[3] - box[1])
    return inter / np.maximum(area_t + area_b - inter, 1e-12)


def build_targets(
    coords: Tensor,
    gt_boxes: np.ndarray,
    grid_hw: tuple[int, int],
    anchors: np.ndarray,
    stride: int,
) -> SupervisionTargets:
    """Derive all supervision from embodied coordinates and ground-truth boxes.

    Args:
        coords: (B, S, S, 3) embodied coordinate map (full resolution).
        gt_boxes: (B, 4) integer (x_min, y_min, x_max, y_max) pixel boxes.
        grid_hw: feature grid (H, W); stride = S / H.
        anchors: (A, 2) anchor prior (w, h) in pixels.
    """
    b = coords.shape[0]
    size = coords.shape[1]
    h, w = grid_hw
    device, dtype = coords.device, coords.dtype
    gt = np.asarray(gt_boxes, dtype=np.float64)
    if (gt[:, 0] >= gt[:, 2]).any() or (gt[:, 1] >= gt[:, 3]).any():
        raise LossError("degenerate ground-truth box")
    if (gt < 0).any() or (gt > size).any():
        raise LossError("ground-truth box outside the image grid; nothing to assign")

    directions, masks, assigns, offsets, ignores = [], [], [], [], []
    templates = _anchor_boxes(grid_hw, anchors, stride)
    cell_cols = (np.arange(w) + 0.5) * stride
    cell_rows = (np.arange(h) + 0.5) * stride
    for i in range(b):
        x0, y0, x1, y1 = gt[i]
        directions.append(
            coords[i, int(y0):int(y1), int(x0):int(x1)].reshape(-1, 3).mean(dim=0)
        )
        inside = (
            (cell_cols[None, :] >= x0) & (cell_cols[None, :] < x1)
            & (cell_rows[:, None] >= y0) & (cell_rows[:, None] < y1)
        )
        if not inside.any():
            # tiny box between cell centers: fall back to the cell holding it
            cj = min(int(((x0 + x1) / 2) // stride), w - 1)
            ci = min(int(((y0 + y1) / 2) // stride), h - 1)
            inside[ci, cj] = True
        masks.append(inside)

        iou = _iou_grid(templates, gt[i])
        ri, ci_, ai = np.unravel_index(int(iou.argmax()), iou.shape)
        assigns.append((ri, ci_, ai))
        ignore = iou > _IGNORE_IOU
        ignore[ri, ci_, ai] = False
        ignores.append(ignore)

        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        fx = np.clip(cx / stride - ci_, _OFFSET_EPS, 1 - _OFFSET_EPS)
        fy = np.clip(cy / stride - ri, _OFFSET_EPS, 1 - _OFFSET_EPS)
        offsets.append(
            (
                np.log(fx / (1 - fx)),
                np.log(fy / (1 - fy)),
                np.log((x1 - x0) / anchors[ai, 0]),
                np.log((y1 - y0) / anchors[ai, 1]),
            )
        )

    box_direction = torch.stack(directions).detach()
    return SupervisionTargets(
        box_direction=box_direction,
        valid_direction=box_direction.norm(dim=-1) > _DEGENERATE_NORM,
        box_mask=torch.as_tensor(np.stack(masks), device=device).to(dtype),
        assignment=torch.as_tensor(np.asarray(assigns, dtype=np.int64), device=device),
        offset_targets=torch.as_tensor(np.asarray(offsets), device=device, dtype=dtype),
        ignore=torch.as_tensor(np.stack(ignores), device=device),
    )


def regression_loss(direction: Tensor, box_direction: Tensor) -> Tensor:
    """1 - cos between the predicted direction and the normalized box target."""
    norms = box_direction.norm(dim=-1)
    if (norms <= _DEGENERATE_NORM).any():
        raise DegenerateTargetError(
            "box direction norm <= 1e-8; skip this sample instead of dividing"
        )
    unit = box_direction / norms[..., None]
    return (1.0 - (unit * direction).sum(-1)).mean()


def attention_loss(attention: Tensor, box_mask: Tensor) -> Tensor:
    """1 - attention mass captured inside the ground-truth box."""
    captured = (attention * box_mask).sum(dim=(-2, -1))
    return (1.0 - captured).mean()


def diverse_loss(word_attention: Tensor) -> Tensor:
    """Squared off-diagonal Frobenius norm of the word co-attention Gram matrix."""
    if word_attention.ndim == 2:
        word_attention = word_attention[None]
    gram = torch.einsum("brt,bru->btu", word_attention, word_attention)
    t = gram.shape[-1]
    eye = torch.eye(t, dtype=gram.dtype, device=gram.device)
    return ((gram * (1.0 - eye)) ** 2).sum(dim=(-2, -1)).mean()


def yolo_loss(raw: Tensor, targets: SupervisionTargets) -> Tensor:
    """Squared-error offsets at the assigned slot + objectness BCE elsewhere."""
    b, ch, h, w = raw.shape
    num_anchors = ch // 5
    r = raw.reshape(b, num_anchors, 5, h, w)
    batch_idx = torch.arange(b, device=raw.device)
    ri, ci, ai = targets.assignment[:, 0], targets.assignment[:, 1], targets.assignment[:, 2]
    pred_offsets = r[batch_idx, ai, :4, ri, ci]
    offset_term = ((pred_offsets - targets.offset_targets) ** 2).sum(dim=1)

    obj_logits = r[:, :, 4].permute(0, 2, 3, 1)  # (B, H, W, A)
    obj_target = torch.zeros_like(obj_logits)
    obj_target[batch_idx, ri, ci, ai] = 1.0
    weight = (~targets.ignore).to(raw.dtype)
    weight[batch_idx, ri, ci, ai] = 1.0
    bce = F.binary_cross_entropy_with_logits(obj_logits, obj_target, reduction="none")
    obj_term = (bce * weight).sum(dim=(1, 2, 3))
    return (offset_term + obj_term).mean()


@dataclass
class LossBundle:
    loss_yolo: Tensor
    loss_div: Tensor
    loss_reg: Tensor
    loss_attn: Tensor
    total: Tensor
    weights: tuple[float, float, float, float]

    def detached(self) -> dict[str, float]:
        return {
            "loss_yolo": self.loss_yolo.detach().item(),
            "loss_div": self.loss_div.detach().item(),
            "loss_reg": self.loss_reg.detach().item(),
            "loss_attn": self.loss_attn.detach().item(),
            "total": self.total.detach().item(),
        }


def total_loss(
    loss_yolo: Tensor,
    loss_div: Tensor,
    loss_reg: Tensor,
    loss_attn: Tensor,
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> LossBundle:
    terms = {
        "loss_yolo": loss_yolo,
        "loss_div": loss_div,
        "loss_reg": loss_reg,
        "loss_attn": loss_attn,
    }
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise NonFiniteLossError(name, float(value))
    wy, wd, wr, wa = weights
    total = wy * loss_yolo + wd * loss_div + wr * loss_reg + wa * loss_attn
    return LossBundle(loss_yolo, loss_div, loss_reg, loss_attn, total, tuple(weights))
