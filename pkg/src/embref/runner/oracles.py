"""Brute-force oracle suites, runnable standalone before any training.

Every oracle recomputes its target quantity by an independent route (per-pixel
python loops, exhaustive enumeration, hand arithmetic, central finite
differences) and compares against the implementation at a stated tolerance.
``run_suite("all")`` aggregates every suite; the CLI exits 2 on any failure.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..body_language import BodyLanguageEncoder, mask_body_features
from ..config import RunConfig
from ..encoders import GesturePool, MultimodalFusion, avg_pool_channels_last, avg_pool_plane
from ..evalmetrics import evaluate, iou
from ..fixtures import (
    GeneratorConfig,
    generate_scene,
    generator_config_from_manifest,
    horizontal_flip,
    pointing_ray_hits_box,
    read_dataset,
    resolve_referent,
    samples_equal,
    write_dataset,
)
from ..geometry import build_coordinate_map, embody, sender_position
from ..gradcheck import relative_gradient_error
from ..losses import (
    attention_loss,
    build_targets,
    diverse_loss,
    regression_loss,
    total_loss,
    yolo_loss,
)
from ..relation import SubQueryFiLM, decode_detections, fixed_anchors, pooled_gate, spatial_attention

MAP_TOL = 1e-6
GRAD_TOL = 1e-4


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str = ""


def _check(name: str, passed: bool, detail: str = "") -> OracleResult:
    return OracleResult(name=name, passed=bool(passed), detail=detail)


def _close(a, b, tol) -> tuple[bool, str]:
    diff = float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
    return diff <= tol, f"max abs diff {diff:.3g} (tol {tol:g})"


# ---------------------------------------------------------------------------


def oracle_geometry() -> list[OracleResult]:
    rng = np.random.default_rng(7)
    results = []

    h, w = 48, 40
    depth = torch.tensor(rng.uniform(0, 1, (h, w)))
    coords = build_coordinate_map(depth).numpy()
    loop = np.zeros((h, w, 3))
    for x in range(h):
        for y in range(w):
            loop[x, y] = (x / h, y / w, float(depth[x, y]))
    ok, detail = _close(coords, loop, 1e-7)
    results.append(_check("geometry/coordinate_map_vs_pixel_loop", ok, detail))

    mask = np.zeros((h, w))
    flat = rng.choice(h * w, size=1000, replace=False)
    mask.reshape(-1)[flat] = 1
    pos = sender_position(torch.tensor(coords), torch.tensor(mask)).numpy()
    acc, count = np.zeros(3), 0
    for x in range(h):
        for y in range(w):
            if mask[x, y]:
                acc += loop[x, y]
                count += 1
    ok, detail = _close(pos, acc / count, 1e-7)
    results.append(_check("geometry/sender_position_vs_accumulate", ok, detail))

    coords_t = torch.tensor(coords)
    mask_t = torch.tensor(mask)
    base = embody(coords_t, sender_position(coords_t, mask_t))
    shift = torch.tensor([0.31, -0.12, 0.57])
    shifted = coords_t + shift
    moved = embody(shifted, sender_position(shifted, mask_t))
    ok, detail = _close(base.numpy(), moved.numpy(), MAP_TOL)
    results.append(_check("geometry/translation_invariance", ok, detail))

    masked_mean = (base * mask_t[..., None]).sum(dim=(0, 1)) / mask_t.sum()
    ok, detail = _close(masked_mean.numpy(), np.zeros(3), MAP_TOL)
    results.append(_check("geometry/reorigin_masked_mean_zero", ok, detail))
    return results


def oracle_encoders() -> list[OracleResult]:
    rng = np.random.default_rng(11)
    results = []
    factor = 16

    # pooling support: a pooled cell is nonzero iff its source block is
    field = np.zeros((64, 64, 3))
    seg_pixels = [(rng.integers(0, 64), rng.integers(0, 64)) for _ in range(40)]
    for r, c in seg_pixels:
        field[r, c] = (rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0)
    pooled = GesturePool(factor)(torch.tensor(field).permute(2, 0, 1)[None].double())[0]
    support = (pooled.abs().sum(0) > 0).numpy()
    expected = np.zeros((4, 4), dtype=bool)
    for r, c in seg_pixels:
        expected[r // factor, c // factor] = True
    results.append(
        _check("encoders/gesture_pool_support", bool((support == expected).all()),
               f"{support.sum()} vs {expected.sum()} active cells")
    )

    rand_field = torch.tensor(rng.uniform(-1, 1, (1, 3, 64, 64)))
    pooled = GesturePool(factor)(rand_field)
    ok, detail = _close(pooled.mean().item(), rand_field.mean().item(), MAP_TOL)
    results.append(_check("encoders/gesture_pool_mean_preserved", ok, detail))

    const = torch.empty(1, 32, 32, 3, dtype=torch.float64)
    const[..., 0], const[..., 1], const[..., 2] = 0.2, -0.7, 0.4
    pooled = avg_pool_channels_last(const, 16)
    ok, detail = _close(pooled.numpy(), np.broadcast_to([0.2, -0.7, 0.4], (1, 2, 2, 3)), 1e-12)
    results.append(_check("encoders/avgpool_constant_map", ok, detail))

    # identity-selecting 1x1 conv returns the visual features untouched
    c = 8
    fusion = MultimodalFusion(c).double()
    with torch.no_grad():
        fusion.conv.weight.zero_()
        fusion.conv.bias.zero_()
        for i in range(c):
            fusion.conv.weight[i, i, 0, 0] = 1.0
    s_v = torch.tensor(rng.normal(size=(2, c, 4, 4)))
    s_g = torch.tensor(rng.normal(size=(2, 3, 4, 4)))
    pr = torch.tensor(rng.normal(size=(2, 4, 4, 3)))
    ok, detail = _close(fusion(s_v, s_g, pr).detach().numpy(), s_v.numpy(), 1e-12)
    results.append(_check("encoders/fusion_identity_weights", ok, detail))

    fusion = MultimodalFusion(c).double()
    probe = torch.tensor(rng.normal(size=(1, c, 4, 4)))

    def loss_fn():
        return (fusion(s_v[:1], s_g[:1], pr[:1]) * probe).sum()

    err = relative_gradient_error(loss_fn, list(fusion.parameters()))
    results.append(
        _check("encoders/fusion_finite_difference_grad", err < GRAD_TOL, f"rel err {err:.2e}")
    )
    return results


def oracle_body() -> list[OracleResult]:
    rng = np.random.default_rng(13)
    results = []

    fused = torch.tensor(rng.normal(size=(1, 5, 4, 4)))
    mask = torch.tensor((rng.uniform(size=(1, 8, 8)) < 0.4).astype(np.float64))
    out = mask_body_features(fused, mask, 2).numpy()
    loop = np.zeros_like(out)
    for ch in range(5):
        for i in range(4):
            for j in range(4):
                gate = mask[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].numpy().mean()
                loop[0, ch, i, j] = fused[0, ch, i, j].item() * gate
    ok, detail = _close(out, loop, 1e-7)
    results.append(_check("body/masked_features_vs_elementwise", ok, detail))

    torch.manual_seed(3)
    enc = BodyLanguageEncoder(channels=8, grid_hw=(4, 4), layers=1, heads=2).double()
    body_map = torch.tensor(rng.normal(size=(1, 8, 4, 4)))
    target = torch.tensor(rng.normal(size=(1, 3)))
    target = target / target.norm()

    def loss_fn():
        return regression_loss(enc(body_map), target)

    err = relative_gradient_error(loss_fn, list(enc.head.parameters()))
    results.append(
        _check("body/regression_head_finite_difference", err < GRAD_TOL, f"rel err {err:.2e}")
    )
    return results


def oracle_relation() -> list[OracleResult]:
    rng = np.random.default_rng(17)
    results = []

    direction = torch.tensor(rng.normal(size=(1, 3)))
    direction = direction / direction.norm()
    coords = torch.tensor(rng.normal(size=(1, 32, 32, 3)))
    coords[0, 5, 7] = 0.0  # a sender-location pixel
    attn = spatial_attention(direction, coords).numpy()
    loop = np.zeros((32, 32))
    d = direction[0].numpy()
    for x in range(32):
        for y in range(32):
            v = coords[0, x, y].numpy()
            n = math.sqrt(float((v * v).sum()))
            loop[x, y] = 0.0 if n < 1e-8 else float((v / n) @ d)
    ok, detail = _close(attn[0], loop, MAP_TOL)
    results.append(_check("relation/cosine_map_vs_pixel_loop", ok, detail))

    mask = torch.tensor((rng.uniform(size=(1, 64, 64)) < 0.1).astype(np.float64))
    facing = torch.tensor(rng.uniform(-1, 1, (1, 64, 64)))
    gate = pooled_gate(mask + facing, 16).numpy()
    loop = np.zeros((4, 4))
    src = (mask + facing)[0].numpy()
    for i in range(4):
        for j in range(4):
            total = 0.0
            for a in range(16):
                for b in range(16):
                    total += src[16 * i + a, 16 * j + b]
            loop[i, j] = max(0.0, total / 256.0)
    ok, detail = _close(gate[0], loop, MAP_TOL)
    results.append(_check("relation/pooled_relu_gate_vs_summation", ok, detail))

    torch.manual_seed(5)
    film = SubQueryFiLM(channels=8, rounds=3).double()
    fused = torch.tensor(rng.normal(size=(1, 8, 4, 4)))
    gate = torch.tensor(rng.uniform(0, 1, (1, 4, 4)))
    words = torch.tensor(rng.normal(size=(1, 3, 8)))
    probe = torch.tensor(rng.normal(size=(1, 8, 4, 4)))

    def loss_fn():
        out, _ = film(fused, gate, words)
        return (out * probe).sum()

    err = relative_gradient_error(loss_fn, list(film.parameters()))
    results.append(
        _check("relation/film_finite_difference_grad", err < GRAD_TOL, f"rel err {err:.2e}")
    )

    # decode a constructed raw tensor by hand
    anchors = fixed_anchors(128, (0.1, 0.25, 0.5))
    raw = torch.full((1, 15, 8, 8), -10.0, dtype=torch.float64)
    ri, ci, ai = 3, 6, 1
    tx, ty, tw, th = 0.4, -0.3, 0.2, -0.1
    raw[0, ai * 5 + 0, ri, ci] = tx
    raw[0, ai * 5 + 1, ri, ci] = ty
    raw[0, ai * 5 + 2, ri, ci] = tw
    raw[0, ai * 5 + 3, ri, ci] = th
    raw[0, ai * 5 + 4, ri, ci] = 8.0
    det = decode_detections(raw, anchors, 16, 128)
    boxes, conf = det.top1()
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    cx = (ci + sig(tx)) * 16
    cy = (ri + sig(ty)) * 16
    bw = anchors[ai, 0] * math.exp(tw)
    bh = anchors[ai, 1] * math.exp(th)
    hand = [cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2]
    ok, detail = _close(boxes[0].numpy(), hand, MAP_TOL)
    flat_idx = int(det.confidence.reshape(-1).argmax())
    cell_ok = flat_idx == (ri * 8 + ci) * 3 + ai
    results.append(_check("relation/decode_by_hand", ok and cell_ok, detail))
    results.append(
        _check(
            "relation/confidence_squashed",
            bool((det.confidence.min() >= 0) and (det.confidence.max() <= 1)),
            f"range [{det.confidence.min():.3f}, {det.confidence.max():.3f}]",
        )
    )
    return results


def oracle_losses() -> list[OracleResult]:
    rng = np.random.default_rng(19)
    results = []

    # uniform attention over 32x32 with a 256-cell box -> 1 - 256/1024
    attn = torch.full((1, 32, 32), 1.0 / 1024, dtype=torch.float64)
    mask = torch.zeros(1, 32, 32, dtype=torch.float64)
    mask[0, 4:20, 8:24] = 1.0
    val = attention_loss(attn, mask).item()
    ok, detail = _close(val, 0.75, 1e-9)
    results.append(_check("losses/attention_uniform_enumeration", ok, detail))

    a = torch.tensor([[math.sqrt(0.5), math.sqrt(0.5)]], dtype=torch.float64)
    val = diverse_loss(a).item()
    ok, detail = _close(val, 0.5, 1e-9)
    results.append(_check("losses/diverse_hand_matrix", ok, detail))

    # anchor assignment vs exhaustive loop over cells x anchors
    anchors = fixed_anchors(128, (0.1, 0.25, 0.5))
    coords = torch.tensor(rng.uniform(0, 1, (6, 128, 128, 3)))
    boxes = []
    for _ in range(6):
        x0 = int(rng.integers(0, 100))
        y0 = int(rng.integers(0, 100))
        boxes.append([x0, y0, x0 + int(rng.integers(8, 28)), y0 + int(rng.integers(8, 28))])
    gt = np.array(boxes, dtype=np.int64)
    targets = build_targets(coords, gt, (8, 8), anchors, 16)
    all_ok = True
    for b in range(6):
        best, best_iou = None, -1.0
        for i in range(8):
            for j in range(8):
                for a_idx in range(3):
                    cx, cy = (j + 0.5) * 16, (i + 0.5) * 16
                    aw, ah = anchors[a_idx]
                    cand = [cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2]
                    v = iou(cand, gt[b])
                    if v > best_iou:
                        best, best_iou = (i, j, a_idx), v
        if tuple(targets.assignment[b].tolist()) != best:
            all_ok = False
    results.append(_check("losses/anchor_assignment_vs_exhaustive", all_ok))

    # perfect predictions with saturated objectness give a near-zero loss
    raw = torch.full((6, 15, 8, 8), -20.0, dtype=torch.float64)
    for b in range(6):
        ri, ci, ai = targets.assignment[b].tolist()
        raw[b, ai * 5:ai * 5 + 4, ri, ci] = targets.offset_targets[b]
        raw[b, ai * 5 + 4, ri, ci] = 20.0
    val = yolo_loss(raw, targets).item()
    results.append(_check("losses/yolo_perfect_prediction", val < 1e-3, f"loss {val:.2e}"))

    # finite differences for every loss at a random non-boundary point
    direction = torch.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    box_dir = torch.tensor(rng.normal(size=(2, 3)) + 0.5)
    err = relative_gradient_error(lambda: regression_loss(direction / direction.norm(dim=-1, keepdim=True), box_dir), [direction])
    results.append(_check("losses/regression_fd_grad", err < GRAD_TOL, f"rel err {err:.2e}"))

    logits = torch.tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
    mask44 = torch.tensor((rng.uniform(size=(2, 4, 4)) < 0.4).astype(np.float64))

    def attn_fn():
        a = torch.softmax(logits.reshape(2, -1), dim=1).reshape(2, 4, 4)
        return attention_loss(a, mask44)

    err = relative_gradient_error(attn_fn, [logits])
    results.append(_check("losses/attention_fd_grad", err < GRAD_TOL, f"rel err {err:.2e}"))

    word_logits = torch.tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)

    def div_fn():
        return diverse_loss(torch.softmax(word_logits, dim=-1))

    err = relative_gradient_error(div_fn, [word_logits])
    results.append(_check("losses/diverse_fd_grad", err < GRAD_TOL, f"rel err {err:.2e}"))

    raw_p = torch.tensor(rng.normal(size=(2, 15, 8, 8)) * 0.5, requires_grad=True)
    t2 = build_targets(coords[:2], gt[:2], (8, 8), anchors, 16)
    err = relative_gradient_error(lambda: yolo_loss(raw_p, t2), [raw_p])
    results.append(_check("losses/yolo_fd_grad", err < GRAD_TOL, f"rel err {err:.2e}"))

    # total gradient equals the sum of per-term gradients
    probe = torch.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    terms = {
        "loss_yolo": (probe**2).sum(),
        "loss_div": (probe.sum() - 1) ** 2,
        "loss_reg": probe.abs().sum() * 0.1,
        "loss_attn": (probe * 0.3).sum().clamp(min=-10) ** 2,
    }
    bundle = total_loss(**terms)
    total_grad = torch.autograd.grad(bundle.total, probe, retain_graph=True)[0]
    per_term = sum(
        torch.autograd.grad(v, probe, retain_graph=True)[0] for v in terms.values()
    )
    ok, detail = _close(total_grad.numpy(), per_term.numpy(), 1e-6)
    results.append(_check("losses/total_gradient_additivity", ok, detail))
    return results


def oracle_evalmetrics() -> list[OracleResult]:
    results = []

    # pixel-counting IoU oracle on a rasterized grid
    a, b = (0, 0, 2, 2), (1, 0, 3, 2)
    scale = 100  # rasterize at sub-pixel resolution
    grid_a = np.zeros((400, 400), dtype=bool)
    grid_b = np.zeros((400, 400), dtype=bool)
    grid_a[a[1] * scale:a[3] * scale, a[0] * scale:a[2] * scale] = True
    grid_b[b[1] * scale:b[3] * scale, b[0] * scale:b[2] * scale] = True
    raster = (grid_a & grid_b).sum() / (grid_a | grid_b).sum()
    val = iou(a, b)
    ok, detail = _close(val, raster, 1e-9)
    results.append(_check("evalmetrics/iou_pixel_counting", ok and abs(val - 1 / 3) < 1e-9, detail))

    # ten handcrafted pairs vs hand enumeration
    pairs = [
        ((0, 0, 10, 10), (0, 0, 10, 10)),    # 1.0
        ((0, 0, 10, 10), (20, 20, 30, 30)),  # 0.0
        ((0, 0, 10, 10), (5, 0, 15, 10)),    # 50/150 = 1/3
        ((0, 0, 10, 10), (0, 0, 10, 5)),     # 0.5
        ((0, 0, 8, 8), (2, 2, 6, 6)),        # 16/64 = 0.25
        ((0, 0, 10, 10), (1, 1, 9, 9)),      # 64/100
        ((0, 0, 4, 4), (0, 0, 16, 16)),      # 16/256
        ((0, 0, 10, 10), (9, 9, 19, 19)),    # 1/199
        ((0, 0, 10, 10), (0, 5, 10, 15)),    # 50/150
        ((0, 0, 10, 10), (3, 0, 13, 10)),    # 70/130
    ]
    expected_ious = [1.0, 0.0, 1 / 3, 0.5, 0.25, 0.64, 1 / 16, 1 / 199, 1 / 3, 7 / 13]
    preds = {f"s{i}": np.array(p[1], dtype=np.float64) for i, p in enumerate(pairs)}
    gts = {f"s{i}": np.array(p[0], dtype=np.float64) for i, p in enumerate(pairs)}
    report = evaluate(preds, gts)
    hand = {
        x: 100.0 * sum(v > x for v in expected_ious) / len(expected_ious)
        for x in (0.25, 0.50, 0.75)
    }
    ok = all(abs(report.prec[(x, "all")] - hand[x]) < 1e-9 for x in hand)
    results.append(_check("evalmetrics/prec_hand_enumeration", ok, str(hand)))
    return results


def oracle_fixtures() -> list[OracleResult]:
    results = []
    cfg = GeneratorConfig(image_size=64, max_objects=4)
    s0, s1 = generate_scene(0, cfg), generate_scene(1, cfg)
    differs = (not np.array_equal(s0.gt_box, s1.gt_box)) or (not np.array_equal(s0.tokens, s1.tokens))
    results.append(_check("fixtures/seed_variation", differs))

    flip_ok, ray_ok, unique_ok = True, True, True
    for seed in range(12):
        s = generate_scene(seed, cfg)
        ci, si, ri = cfg.parse_tokens(s.tokens)
        res = resolve_referent(ci, si, ri, s.pose.sender_center, s.pose.body_orientation, s.objects)
        target = next(i for i, o in enumerate(s.objects) if np.array_equal(o.box, s.gt_box))
        unique_ok &= res is not None and res.index == target
        f = horizontal_flip(s)
        rf = resolve_referent(
            *cfg.parse_tokens(f.tokens), f.pose.sender_center, f.pose.body_orientation, f.objects
        )
        ftarget = next(i for i, o in enumerate(f.objects) if np.array_equal(o.box, f.gt_box))
        flip_ok &= rf is not None and rf.index == ftarget == target
        ray_ok &= pointing_ray_hits_box(s.pose, s.gt_box, cfg.image_size)
    results.append(_check("fixtures/referent_unique_and_resolved", unique_ok))
    results.append(_check("fixtures/flip_preserves_referent", flip_ok))
    results.append(_check("fixtures/pointing_ray_in_dilated_box", ray_ok))

    with tempfile.TemporaryDirectory() as tmp:
        samples = [generate_scene(s, cfg) for s in range(5)]
        write_dataset(tmp, {"train": samples[:3], "test": samples[3:]}, cfg)
        manifest, reader = read_dataset(tmp)
        round_ok = all(
            samples_equal(s, reader.load(s.sample_id)) for s in samples
        )
        cfg_ok = generator_config_from_manifest(manifest) == cfg
    results.append(_check("fixtures/dataset_roundtrip_identity", round_ok and cfg_ok))
    return results


SUITES: dict[str, Callable[[], list[OracleResult]]] = {
    "geometry": oracle_geometry,
    "encoders": oracle_encoders,
    "body": oracle_body,
    "relation": oracle_relation,
    "losses": oracle_losses,
    "evalmetrics": oracle_evalmetrics,
    "fixtures": oracle_fixtures,
}


def run_suite(name: str) -> list[OracleResult]:
    if name == "all":
        results = []
        for suite in SUITES.values():
            results.extend(suite())
        return results
    if name not in SUITES:
        raise KeyError(f"unknown oracle suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
