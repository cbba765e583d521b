"""Qualitative panels: boxes, facing/pointing attention overlays, and
per-FiLM-round confidence heatmaps with and without the facing gate.

Five files per sample:
  <id>_1_boxes.png    input with ground truth (green) and prediction (yellow)
  <id>_2_facing.png   facing cosine map over the input
  <id>_3_gesture.png  pointing attention over the input
  <id>_4_verbal_gated.png    round confidence heatmaps, facing gate on
  <id>_5_verbal_ungated.png  the same rounds with the gate forced off
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

from ..fixtures import read_dataset
from ..model import GroundingModel, collate
from .training import load_checkpoint, restore_model


class UnknownSampleError(KeyError):
    pass


def _upsample(grid: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)


def _save_overlay(path: Path, image: np.ndarray, heat: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image)
    ax.imshow(heat, cmap="jet", alpha=0.45)
    ax.set_title(title, fontsize=9)
    ax.axis("off")
    fig.savefig(path, bbox_inches="tight", dpi=110)
    plt.close(fig)


def _save_boxes(path: Path, image: np.ndarray, gt_box, pred_box) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image)
    for box, color in ((gt_box, "lime"), (pred_box, "yellow")):
        x0, y0, x1, y1 = [float(v) for v in box]
        ax.add_patch(
            plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, edgecolor=color, linewidth=2)
        )
    ax.set_title("gt (green) vs prediction (yellow)", fontsize=9)
    ax.axis("off")
    fig.savefig(path, bbox_inches="tight", dpi=110)
    plt.close(fig)


def _save_rounds(path: Path, image: np.ndarray, maps: list[np.ndarray], factor: int, title: str) -> None:
    fig, axes = plt.subplots(len(maps), 1, figsize=(3.2, 3.2 * len(maps)))
    if len(maps) == 1:
        axes = [axes]
    for r, (ax, heat) in enumerate(zip(axes, maps)):
        ax.imshow(image)
        ax.imshow(_upsample(heat, factor), cmap="jet", alpha=0.45)
        ax.set_title(f"{title}, round {r + 1}", fontsize=8)
        ax.axis("off")
    fig.savefig(path, bbox_inches="tight", dpi=110)
    plt.close(fig)


def visualize(
    checkpoint: str | Path | GroundingModel,
    data_root: str | Path,
    sample_ids: list[str],
    out_dir: str | Path,
    dump_coords: bool = False,
    dump_body_attention: bool = False,
) -> list[Path]:
    if isinstance(checkpoint, GroundingModel):
        model = checkpoint
    else:
        model, _ = restore_model(load_checkpoint(checkpoint))
    model.eval()
    cfg = model.cfg
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, reader = read_dataset(data_root)

    written: list[Path] = []
    for sample_id in sample_ids:
        try:
            sample = reader.load(sample_id)
        except Exception as err:
            raise UnknownSampleError(f"unknown sample_id {sample_id!r}") from err
        batch = collate([sample])
        with torch.no_grad():
            outputs = model(batch)
            pred_box, _ = outputs.detections.top1()
        image = sample.image

        p1 = out / f"{sample_id}_1_boxes.png"
        _save_boxes(p1, image, sample.gt_box, pred_box[0].numpy())

        facing = (
            outputs.facing[0].numpy()
            if outputs.facing is not None
            else np.zeros(image.shape[:2])
        )
        p2 = out / f"{sample_id}_2_facing.png"
        _save_overlay(p2, image, facing, "facing attention" if outputs.facing is not None else "facing attention (disabled)")

        gesture = (
            _upsample(outputs.gesture_attention[0].numpy(), cfg.stride)
            if outputs.gesture_attention is not None
            else np.zeros(image.shape[:2])
        )
        p3 = out / f"{sample_id}_3_gesture.png"
        _save_overlay(p3, image, gesture, "pointing attention" if outputs.gesture_attention is not None else "pointing attention (disabled)")

        gated = [m[0].numpy() for m in model.film_confidence(batch, gated=True)]
        ungated = [m[0].numpy() for m in model.film_confidence(batch, gated=False)]
        p4 = out / f"{sample_id}_4_verbal_gated.png"
        p5 = out / f"{sample_id}_5_verbal_ungated.png"
        _save_rounds(p4, image, gated, cfg.stride, "verbal confidence w/ gate")
        _save_rounds(p5, image, ungated, cfg.stride, "verbal confidence w/o gate")
        written.extend([p1, p2, p3, p4, p5])

        if dump_coords:
            coords = outputs.embodied[0].numpy()
            for ch, name in enumerate(("row", "col", "depth")):
                grid = coords[..., ch]
                span = grid.max() - grid.min()
                norm = (grid - grid.min()) / (span if span > 0 else 1.0)
                path = out / f"{sample_id}_coords_{name}.png"
                plt.imsave(path, norm, cmap="gray")
                written.append(path)

        if dump_body_attention and model.body is not None:
            from ..body_language import mask_body_features

            with torch.no_grad():
                body_map = mask_body_features(
                    outputs.fused, batch["sender_mask"], cfg.stride
                )
                _, attn = model.body(body_map, return_attention=True)
            path = out / f"{sample_id}_body_attention.png"
            _save_overlay(path, image, _upsample(attn[0].numpy(), cfg.stride), "readout attention")
            written.append(path)
    return written
