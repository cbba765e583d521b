"""Training loop: RMSProp with a halving schedule, flip augmentation,
per-step loss logging, per-epoch checkpoints, and exact resumption.

Determinism contract: the sample order and flip decisions of epoch ``e`` are
drawn from ``default_rng([rng_seed, e])``, parameters and optimizer state
live in the checkpoint, and nothing else consumes randomness during a step —
so resuming from the epoch-``e`` checkpoint reproduces epoch ``e+1`` bit for
bit.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..config import RunConfig
from ..evalmetrics import EvalReport, evaluate
from ..fixtures import horizontal_flip, read_dataset
from ..losses import (
    LossBundle,
    NonFiniteLossError,
    attention_loss,
    build_targets,
    diverse_loss,
    regression_loss,
    total_loss,
    yolo_loss,
)
from ..model import GroundingModel, ModelOutputs, collate
from ..relation import fixed_anchors, kmeans_anchors

CHECKPOINT_NAME = "checkpoint.pt"
METRICS_NAME = "metrics.jsonl"


class TrainingAbortedError(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    history: list[dict]


def compute_anchors(cfg: RunConfig, train_samples) -> np.ndarray:
    if cfg.anchors == "fixed":
        return fixed_anchors(cfg.image_size, cfg.anchor_rel_sizes)
    sizes = np.array(
        [[s.gt_box[2] - s.gt_box[0], s.gt_box[3] - s.gt_box[1]] for s in train_samples],
        dtype=np.float64,
    )
    return kmeans_anchors(sizes, k=len(cfg.anchor_rel_sizes))


def compute_losses(out: ModelOutputs, batch: dict, cfg: RunConfig, anchors: np.ndarray) -> LossBundle:
    targets = build_targets(out.embodied, batch["gt_box"], (cfg.h, cfg.w), anchors, cfg.stride)
    zero = out.raw.sum() * 0.0
    loss_y = yolo_loss(out.raw, targets)
    loss_d = diverse_loss(out.subquery.word_attention)
    loss_r = zero
    if cfg.use_body_vector:
        valid = targets.valid_direction
        if bool(valid.all()):
            loss_r = regression_loss(out.body_direction, targets.box_direction)
        elif bool(valid.any()):
            warnings.warn("skipping direction regression for degenerate box targets")
            loss_r = regression_loss(out.body_direction[valid], targets.box_direction[valid])
        else:
            warnings.warn("all box targets degenerate; direction regression skipped")
    loss_a = attention_loss(out.gesture_attention, targets.box_mask) if cfg.use_gesture_attention else zero
    return total_loss(loss_y, loss_d, loss_r, loss_a, cfg.loss_weights)


def save_checkpoint(
    path: Path,
    model: GroundingModel,
    optimizer,
    epoch: int,
    cfg: RunConfig,
    vocabulary: dict,
    history: list[dict],
    step: int,
) -> None:
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "epoch": epoch,
            "step": step,
            "config": cfg.to_dict(),
            "vocabulary": vocabulary,
            "anchors": model.anchors,
            "providers": model.provider_info(),
            "history": history,
            "torch_rng": torch.get_rng_state(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def restore_model(ckpt: dict) -> tuple[GroundingModel, RunConfig]:
    cfg = RunConfig.from_dict(ckpt["config"])
    model = GroundingModel(cfg, len(ckpt["vocabulary"]), np.asarray(ckpt["anchors"]))
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model, cfg


def _log(handle, record: dict) -> None:
    handle.write(json.dumps(record) + "\n")
    handle.flush()


def train(
    cfg: RunConfig,
    data_root: str | Path,
    out_dir: str | Path,
    resume: str | Path | None = None,
    quiet: bool = False,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, reader = read_dataset(data_root)
    train_samples = reader.load_split("train")
    vocabulary = manifest.vocabulary

    torch.manual_seed(cfg.rng_seed)
    anchors = compute_anchors(cfg, train_samples)
    model = GroundingModel(cfg, len(vocabulary), anchors)
    optimizer = torch.optim.RMSprop(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )

    start_epoch, step, history = 0, 0, []
    metrics_path = out / METRICS_NAME
    mode = "w"
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt["config"] != cfg.to_dict():
            raise TrainingAbortedError("resume config does not match checkpoint config")
        model.load_state_dict(ckpt["model"])
        optimizer.load_state_dict(ckpt["optimizer"])
        torch.set_rng_state(ckpt["torch_rng"])
        start_epoch = ckpt["epoch"] + 1
        step = ckpt["step"]
        history = list(ckpt["history"])
        mode = "a"

    ckpt_path = out / CHECKPOINT_NAME
    cfg.to_yaml(out / "config.yaml")
    with open(metrics_path, mode) as log:
        for epoch in range(start_epoch, cfg.total_epochs):
            lr = cfg.lr_at_epoch(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            _log(log, {"kind": "epoch_start", "epoch": epoch, "lr": lr})

            rng = np.random.default_rng([cfg.rng_seed, epoch])
            order = rng.permutation(len(train_samples))
            flips = rng.random(len(train_samples)) < 0.5
            sums, count = {}, 0
            model.train()
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                samples = [
                    horizontal_flip(train_samples[i]) if cfg.flip_augmentation and flips[i]
                    else train_samples[i]
                    for i in idx
                ]
                batch = collate(samples)
                outputs = model(batch)
                try:
                    bundle = compute_losses(outputs, batch, cfg, anchors)
                except NonFiniteLossError as err:
                    raise TrainingAbortedError(f"step {step}: {err}") from err
                optimizer.zero_grad()
                bundle.total.backward()
                optimizer.step()

                values = bundle.detached()
                _log(log, {"kind": "step", "step": step, "epoch": epoch, **values})
                for k, v in values.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
                step += 1

            means = {f"mean_{k}": v / count for k, v in sums.items()}
            record = {"kind": "epoch_end", "epoch": epoch, "lr": lr, **means}
            _log(log, record)
            history.append(record)
            if not quiet:
                print(f"epoch {epoch:3d}  lr {lr:.2e}  total {means['mean_total']:.4f}")
            save_checkpoint(ckpt_path, model, optimizer, epoch, cfg, vocabulary, history, step)
    return TrainResult(checkpoint_path=ckpt_path, metrics_path=metrics_path, history=history)


def overfit(
    cfg: RunConfig,
    data_root: str | Path,
    steps: int = 500,
    lr: float | None = None,
) -> dict:
    """Drive one frozen batch for ``steps`` updates; returns initial/final losses."""
    manifest, reader = read_dataset(data_root)
    samples = reader.load_split("train")[: cfg.batch_size]
    torch.manual_seed(cfg.rng_seed)
    anchors = compute_anchors(cfg, samples)
    model = GroundingModel(cfg, len(manifest.vocabulary), anchors)
    optimizer = torch.optim.RMSprop(
        model.parameters(), lr=lr if lr is not None else cfg.lr,
        weight_decay=cfg.weight_decay,
    )
    batch = collate(samples)
    initial = None
    model.train()
    for _ in range(steps):
        bundle = compute_losses(model(batch), batch, cfg, anchors)
        if initial is None:
            initial = bundle.detached()
        optimizer.zero_grad()
        bundle.total.backward()
        optimizer.step()
    model.eval()
    with torch.no_grad():
        final = compute_losses(model(batch), batch, cfg, anchors).detached()
    return {"initial": initial, "final": final, "steps": steps}


def predict_boxes(model: GroundingModel, samples, batch_size: int = 16) -> dict[str, np.ndarray]:
    """Top-1 predicted box per sample id."""
    model.eval()
    predictions: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            batch = collate(chunk)
            boxes, _ = model(batch).detections.top1()
            for sample, box in zip(chunk, boxes):
                predictions[sample.sample_id] = box.cpu().numpy()
    return predictions


def evaluate_checkpoint(
    checkpoint: str | Path | GroundingModel,
    data_root: str | Path,
    split: str = "test",
    out_dir: str | Path | None = None,
) -> EvalReport:
    if isinstance(checkpoint, GroundingModel):
        model = checkpoint
    else:
        model, _ = restore_model(load_checkpoint(checkpoint))
    _, reader = read_dataset(data_root)
    samples = reader.load_split(split)
    predictions = predict_boxes(model, samples)
    ground_truths = {s.sample_id: s.gt_box.astype(np.float64) for s in samples}
    report = evaluate(predictions, ground_truths)
    if out_dir is not None:
        report.save(out_dir)
    return report
