"""Synthetic embodied scenes with exact ground truth.

Each scene is a flat-shaded pseudo-3D world rendered into a square image:
objects (colored discs / blocks / wedges) and a sender (torso + head + a
pointing arm) live at known positions ``(row/H, col/W, depth)``. The sender
utters a three-word phrase ``<color> <shape> <relation>`` whose relation word
(left / right / front / behind / near) is interpreted in the *sender's*
frame, and the generator guarantees the phrase picks exactly one object.

Ground truth available per scene: image, depth (min-max normalized), sender
segmentation mask, a part-affinity-style gesture field painted along the arm
segments, the token sequence, the target box, the sender pose, and the full
object list (so the referent resolver can be re-run on transformed scenes).

Coordinate conventions:
  * grids are indexed (row, col); normalized positions are index/size
  * boxes are (x_min, y_min, x_max, y_max) with x=col, y=row, pixel units
  * the "ground plane" used for relation words is (col/W, depth)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

RELATIONS = ("left", "right", "front", "behind", "near")
LEFT_ID, RIGHT_ID = 0, 1

DEFAULT_COLORS = ("red", "green", "blue", "yellow")
DEFAULT_SHAPES = ("disc", "block", "wedge")

_COLOR_RGB = {
    "red": (0.88, 0.18, 0.16),
    "green": (0.18, 0.76, 0.24),
    "blue": (0.22, 0.32, 0.88),
    "yellow": (0.90, 0.84, 0.20),
    "magenta": (0.82, 0.22, 0.78),
    "cyan": (0.20, 0.78, 0.80),
}
_BACKGROUND_RGB = (0.09, 0.09, 0.11)
_BODY_RGB = (0.46, 0.33, 0.26)
_HEAD_RGB = (0.72, 0.57, 0.44)
_MARKER_RGB = (0.96, 0.93, 0.88)
_ARM_RGB = (0.62, 0.46, 0.34)


class GenerationError(RuntimeError):
    """Scene generation exhausted its retry budget or got an invalid config."""


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic scene distribution."""

    image_size: int = 128
    min_objects: int = 2
    max_objects: int = 6
    colors: tuple[str, ...] = DEFAULT_COLORS
    shapes: tuple[str, ...] = DEFAULT_SHAPES
    radius_range: tuple[float, float] = (0.08, 0.17)
    max_box_iou: float = 0.3
    colinear_distractor_rate: float = 0.4
    resolver_margin: float = 0.15
    depth_normalization: str = "minmax"
    max_scene_attempts: int = 40
    max_place_attempts: int = 80

    def __post_init__(self) -> None:
        if self.image_size < 32 or self.image_size % 16 != 0:
            raise GenerationError("image_size must be >= 32 and divisible by 16")
        if not (1 <= self.min_objects <= self.max_objects):
            raise GenerationError("object count range is empty")
        if not self.colors or not self.shapes:
            raise GenerationError("vocabulary is empty")
        for c in self.colors:
            if c not in _COLOR_RGB:
                raise GenerationError(f"unknown color {c!r}")
        for s in self.shapes:
            if s not in DEFAULT_SHAPES:
                raise GenerationError(f"unknown shape {s!r}")

    def vocabulary(self) -> dict[str, int]:
        """Word -> token id. Relations come first so left/right ids are fixed."""
        words = list(RELATIONS) + list(self.colors) + list(self.shapes)
        return {w: i for i, w in enumerate(words)}

    def token_ids(self, color_idx: int, shape_idx: int, relation_idx: int) -> np.ndarray:
        n_rel = len(RELATIONS)
        return np.array(
            [n_rel + color_idx, n_rel + len(self.colors) + shape_idx, relation_idx],
            dtype=np.int64,
        )

    def parse_tokens(self, tokens: np.ndarray) -> tuple[int, int, int]:
        """Inverse of token_ids: (color_idx, shape_idx, relation_idx)."""
        n_rel = len(RELATIONS)
        color = int(tokens[0]) - n_rel
        shape = int(tokens[1]) - n_rel - len(self.colors)
        rel = int(tokens[2])
        if not (0 <= color < len(self.colors) and 0 <= shape < len(self.shapes)):
            raise GenerationError(f"tokens {tokens.tolist()} not a <color> <shape> <relation> phrase")
        if not 0 <= rel < n_rel:
            raise GenerationError(f"bad relation token id {rel}")
        return color, shape, rel


@dataclass(frozen=True)
class ScenePose:
    """Sender ground truth in normalized scene units."""

    sender_center: np.ndarray      # (3,) (row/H, col/W, depth)
    body_orientation: np.ndarray   # (3,) unit
    pointing_direction: np.ndarray # (3,) unit, sender -> referent
    arm_segments: np.ndarray       # (S, 4) rows of (r0, c0, r1, c1) pixel coords


@dataclass(frozen=True)
class SceneObject:
    """An entry of the ground-truth scene graph."""

    color_idx: int
    shape_idx: int
    center: np.ndarray  # (3,) normalized (row/H, col/W, depth)
    box: np.ndarray     # (4,) int64 (x_min, y_min, x_max, y_max)


@dataclass
class SceneSample:
    image: np.ndarray          # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray          # (H, W) float32 in [0, 1]
    sender_mask: np.ndarray    # (H, W) uint8 {0, 1}
    gesture_field: np.ndarray  # (H, W, 3) float32 in [-1, 1]
    tokens: np.ndarray         # (T,) int64
    gt_box: np.ndarray         # (4,) int64
    pose: ScenePose
    objects: tuple[SceneObject, ...]
    sample_id: str
    rng_seed: int

    def validate(self, config: GeneratorConfig | None = None) -> None:
        h, w = self.depth.shape
        x0, y0, x1, y1 = self.gt_box.tolist()
        assert 0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h, f"bad gt_box {self.gt_box}"
        assert self.sender_mask.sum() > 0, "sender mask is empty"
        assert self.tokens.ndim == 1 and self.tokens.shape[0] >= 1
        if config is not None:
            assert int(self.tokens.max()) < len(config.vocabulary())
        for v in (self.pose.body_orientation, self.pose.pointing_direction):
            assert abs(float(np.linalg.norm(v)) - 1.0) <= 1e-6
        segs = self.pose.arm_segments.reshape(-1, 2)
        assert (segs[:, 0] >= 0).all() and (segs[:, 0] <= h).all()
        assert (segs[:, 1] >= 0).all() and (segs[:, 1] <= w).all()


@dataclass(frozen=True)
class ReferentResolution:
    index: int           # index into the full object list
    margin: float        # best score minus runner-up (inf if single candidate)
    best_score: float


def _ground(vec: np.ndarray) -> np.ndarray:
    """Project a (row, col, depth) vector onto the (col, depth) ground plane."""
    return np.asarray([vec[1], vec[2]], dtype=np.float64)


def relation_scores(relation_idx: int, offsets: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """Score candidate offsets (N, 3) for one relation word in the sender frame.

    left/right use the sine of the ground-plane angle from the facing
    direction, front/behind its cosine, near the negated ground distance.
    Higher is better; the referent is the argmax.
    """
    ground = offsets[:, 1:3].astype(np.float64)
    norms = np.maximum(np.linalg.norm(ground, axis=1), 1e-9)
    fg = _ground(forward)
    fg = fg / max(float(np.linalg.norm(fg)), 1e-9)
    cos = (ground @ fg) / norms
    sin = (fg[0] * ground[:, 1] - fg[1] * ground[:, 0]) / norms
    rel = RELATIONS[relation_idx]
    if rel == "left":
        return sin
    if rel == "right":
        return -sin
    if rel == "front":
        return cos
    if rel == "behind":
        return -cos
    return -norms  # near


def resolve_referent(
    color_idx: int,
    shape_idx: int,
    relation_idx: int,
    sender_center: np.ndarray,
    body_orientation: np.ndarray,
    objects: Sequence[SceneObject],
) -> ReferentResolution | None:
    """Find the unique object a phrase refers to, from the sender's viewpoint.

    Returns None when no object matches the color+shape category.
    """
    candidates = [i for i, o in enumerate(objects)
                  if o.color_idx == color_idx and o.shape_idx == shape_idx]
    if not candidates:
        return None
    offsets = np.stack([objects[i].center - sender_center for i in candidates])
    scores = relation_scores(relation_idx, offsets, body_orientation)
    order = np.argsort(scores)[::-1]
    best = candidates[int(order[0])]
    margin = float("inf") if len(candidates) == 1 else float(scores[order[0]] - scores[order[1]])
    return ReferentResolution(index=best, margin=margin, best_score=float(scores[order[0]]))


def _relation_is_valid(relation_idx: int, res: ReferentResolution, margin: float) -> bool:
    if res.margin < margin:
        return False
    rel = RELATIONS[relation_idx]
    if rel in ("left", "right", "front", "behind"):
        return res.best_score >= 0.15  # the winner must clearly be on that side
    return True


# ---------------------------------------------------------------------------
# rasterization helpers


def _shape_mask(shape: str, size: int, r_c: float, c_c: float, radius: float) -> np.ndarray:
    rr, cc = np.ogrid[:size, :size]
    if shape == "disc":
        return (rr - r_c) ** 2 + (cc - c_c) ** 2 <= radius**2
    if shape == "block":
        return (np.abs(rr - r_c) <= radius) & (np.abs(cc - c_c) <= radius)
    # wedge: isoceles triangle, apex up, symmetric about its vertical axis
    t = (rr - (r_c - radius)) / (2.0 * radius)
    half = radius * np.clip(t, 0.0, 1.0)
    return (np.abs(cc - c_c) <= half) & (rr >= r_c - radius) & (rr <= r_c + radius)


def _rect_mask(size: int, r_c: float, c_c: float, half_h: float, half_w: float) -> np.ndarray:
    rr, cc = np.ogrid[:size, :size]
    return (np.abs(rr - r_c) <= half_h) & (np.abs(cc - c_c) <= half_w)


def _segment_mask(
    size: int, r0: float, c0: float, r1: float, c1: float, thickness: float
) -> tuple[np.ndarray, np.ndarray]:
    """Pixels within ``thickness`` of the segment, plus the projection fraction."""
    rr, cc = np.mgrid[:size, :size]
    dr, dc = r1 - r0, c1 - c0
    length2 = dr * dr + dc * dc
    if length2 < 1e-12:
        mask = (rr - r0) ** 2 + (cc - c0) ** 2 <= thickness**2
        return mask, np.zeros((size, size))
    t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / length2, 0.0, 1.0)
    dist2 = (rr - r0 - t * dr) ** 2 + (cc - c0 - t * dc) ** 2
    return dist2 <= thickness**2, t


def _box_iou(a: np.ndarray, b: np.ndarray) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / float(area_a + area_b - inter)


# ---------------------------------------------------------------------------
# scene assembly


@dataclass
class _Placed:
    color_idx: int
    shape_idx: int
    r_c: float
    c_c: float
    radius: float
    z: float
    box: np.ndarray
    mask: np.ndarray
    rgb: tuple[float, float, float] = (0.0, 0.0, 0.0)


def _jitter_rgb(rng: np.random.Generator, base, amount: float = 0.06):
    rgb = np.asarray(base, dtype=np.float64) + rng.uniform(-amount, amount, 3)
    return tuple(np.clip(rgb, 0.02, 0.98))


def _place_objects(
    rng: np.random.Generator, cfg: GeneratorConfig, sender_rc: tuple[float, float]
) -> list[_Placed] | None:
    size = cfg.image_size
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    placed: list[_Placed] = []

    def off_ray(r_c, c_c):
        # keep the duplicate clearly off the sender -> first-object image ray
        # unless it is deliberately placed on it
        a = np.array([placed[0].r_c - sender_rc[0], placed[0].c_c - sender_rc[1]])
        b = np.array([r_c - sender_rc[0], c_c - sender_rc[1]])
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < 1e-6 or nb < 1e-6:
            return False
        return float(a @ b) / (na * nb) < 0.9

    def sample_one(color_idx=None, shape_idx=None, near_line=None, require_off_ray=False):
        for _ in range(cfg.max_place_attempts):
            ci = int(rng.integers(len(cfg.colors))) if color_idx is None else color_idx
            si = int(rng.integers(len(cfg.shapes))) if shape_idx is None else shape_idx
            radius = float(rng.uniform(*cfg.radius_range)) * size
            lo, hi = radius + 2.0, size - radius - 2.0
            if near_line is not None:
                (r_s, c_s), (r_a, c_a) = near_line
                t = float(rng.uniform(1.35, 1.95))
                r_c = r_s + t * (r_a - r_s) + float(rng.uniform(-0.03, 0.03)) * size
                c_c = c_s + t * (c_a - c_s) + float(rng.uniform(-0.03, 0.03)) * size
                if not (lo <= r_c <= hi and lo <= c_c <= hi):
                    continue
            else:
                r_c = float(rng.uniform(lo, hi))
                c_c = float(rng.uniform(lo, hi))
            z = float(rng.uniform(0.12, 0.95))
            box = np.array(
                [
                    int(math.floor(c_c - radius)),
                    int(math.floor(r_c - radius)),
                    int(math.ceil(c_c + radius)),
                    int(math.ceil(r_c + radius)),
                ],
                dtype=np.int64,
            )
            box[0] = max(box[0], 0)
            box[1] = max(box[1], 0)
            box[2] = min(box[2], size)
            box[3] = min(box[3], size)
            if any(_box_iou(box, p.box) > cfg.max_box_iou for p in placed):
                continue
            if require_off_ray and not off_ray(r_c, c_c):
                continue
            mask = _shape_mask(cfg.shapes[si], size, r_c, c_c, radius)
            if not mask.any():
                continue
            rgb = _jitter_rgb(rng, _COLOR_RGB[cfg.colors[ci]])
            return _Placed(ci, si, r_c, c_c, radius, z, box, mask, rgb)
        return None

    first = sample_one()
    if first is None:
        return None
    placed.append(first)

    # distractor policy: the scene always contains a duplicate of the first
    # object's category; either deliberately on the sender->object image ray
    # (so only 3D reasoning separates the pair) or clearly off it
    twin = sample_one(
        color_idx=first.color_idx, shape_idx=first.shape_idx, require_off_ray=True
    )
    if twin is None:
        return None
    placed.append(twin)

    for _ in range(n - 2):
        obj = sample_one()
        if obj is None:
            return None
        placed.append(obj)
    return placed


def _paint_items(size, items, background=_BACKGROUND_RGB):
    """Paint (mask, rgb, z) items with a per-pixel depth test (near wins)."""
    image = np.empty((size, size, 3), dtype=np.float64)
    image[:] = background
    depth = np.full((size, size), 1.0, dtype=np.float64)
    owner = np.full((size, size), -1, dtype=np.int64)
    for idx, (mask, rgb, z) in enumerate(items):
        sel = mask & (depth > z)
        image[sel] = rgb
        depth[sel] = z
        owner[sel] = idx
    return image, depth, owner


def _index_coords(size: int) -> tuple[np.ndarray, np.ndarray]:
    rr, cc = np.mgrid[:size, :size]
    return rr / size, cc / size


def _mask_mean_coords(mask: np.ndarray, depth_norm: np.ndarray) -> np.ndarray:
    size = mask.shape[0]
    rn, cn = _index_coords(size)
    sel = mask.astype(bool)
    return np.array(
        [rn[sel].mean(), cn[sel].mean(), depth_norm[sel].mean()], dtype=np.float64
    )


def _box_mean_coords(box: np.ndarray, depth_norm: np.ndarray) -> np.ndarray:
    size = depth_norm.shape[0]
    x0, y0, x1, y1 = box.tolist()
    rows = np.arange(y0, y1, dtype=np.float64)
    cols = np.arange(x0, x1, dtype=np.float64)
    return np.array(
        [
            rows.mean() / size,
            cols.mean() / size,
            depth_norm[y0:y1, x0:x1].mean(),
        ],
        dtype=np.float64,
    )


def generate_scene(seed: int, config: GeneratorConfig | None = None) -> SceneSample:
    """Generate one scene deterministically from (seed, config)."""
    cfg = config if config is not None else GeneratorConfig()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_scene_attempts):
        sample = _try_scene(rng, cfg, seed)
        if sample is not None:
            sample.validate(cfg)
            return sample
    raise GenerationError(
        f"could not build a valid scene for seed={seed} "
        f"within {cfg.max_scene_attempts} attempts"
    )


def _try_scene(rng: np.random.Generator, cfg: GeneratorConfig, seed: int) -> SceneSample | None:
    size = cfg.image_size

    # sender torso + head geometry
    body_w = float(rng.uniform(0.10, 0.15)) * size
    body_h = float(rng.uniform(0.22, 0.30)) * size
    head_r = 0.38 * body_w
    min_row = body_h / 2 + 2.4 * head_r + 2.0
    body_r = float(rng.uniform(max(0.35 * size, min_row), 0.80 * size))
    body_c = float(rng.uniform(0.13 * size, 0.87 * size))
    z_s = float(rng.uniform(0.30, 0.80))
    head_rc = body_r - body_h / 2 - 1.15 * head_r
    sender_box = np.array(
        [
            int(body_c - max(body_w / 2, head_r)) - 1,
            int(head_rc - head_r) - 1,
            int(body_c + max(body_w / 2, head_r)) + 2,
            int(body_r + body_h / 2) + 2,
        ],
        dtype=np.int64,
    )

    # facing direction: mostly in the (col, depth) ground plane
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    tilt = float(rng.uniform(-0.15, 0.15))
    forward = np.array([tilt, math.cos(theta), math.sin(theta)], dtype=np.float64)
    forward /= np.linalg.norm(forward)

    placed = _place_objects(rng, cfg, (body_r, body_c))
    if placed is None:
        return None
    if any(_box_iou(p.box, sender_box) > cfg.max_box_iou for p in placed):
        return None

    # optionally drag the duplicate onto the sender->first-object image ray,
    # at a different depth, so only 3D reasoning can split the pair
    if rng.uniform() < cfg.colinear_distractor_rate:
        line = ((body_r, body_c), (placed[0].r_c, placed[0].c_c))
        redo = _retry_colinear(rng, cfg, placed, line, sender_box)
        if redo is not None:
            placed[1] = redo

    body_mask = _rect_mask(size, body_r, body_c, body_h / 2, body_w / 2)
    head_mask = _shape_mask("disc", size, head_rc, body_c, head_r)
    marker_rc = head_rc + forward[0] * 0.35 * head_r
    marker_cc = body_c + forward[1] * 0.55 * head_r
    marker_r = head_r * (0.38 + 0.20 * forward[2])
    marker_mask = _shape_mask("disc", size, marker_rc, marker_cc, marker_r) & head_mask

    items = [(p.mask, p.rgb, p.z) for p in placed]
    items.append((body_mask, _jitter_rgb(rng, _BODY_RGB, 0.05), z_s))
    items.append((head_mask, _jitter_rgb(rng, _HEAD_RGB, 0.05), z_s - 1e-4))
    items.append((marker_mask, _MARKER_RGB, z_s - 2e-4))
    background = _jitter_rgb(rng, _BACKGROUND_RGB, 0.04)
    image, depth_raw, owner = _paint_items(size, items, background)
    n_obj = len(placed)
    sender_pix = owner >= n_obj

    if not sender_pix.any():
        return None
    z_min, z_max = float(depth_raw.min()), float(depth_raw.max())
    if z_max - z_min < 1e-6:
        return None

    def znorm(z):
        return np.clip((z - z_min) / (z_max - z_min), 0.0, 1.0)

    depth_norm = znorm(depth_raw)
    objects = tuple(
        SceneObject(
            color_idx=p.color_idx,
            shape_idx=p.shape_idx,
            center=np.array(
                [(p.r_c - 0.5) / size, (p.c_c - 0.5) / size, znorm(p.z)], dtype=np.float64
            ),
            box=p.box.copy(),
        )
        for p in placed
    )

    provisional_center = _mask_mean_coords(sender_pix, depth_norm)
    choice = _choose_phrase(rng, cfg, objects, provisional_center, forward)
    if choice is None:
        return None
    color_idx, shape_idx, rel_idx, target = choice

    # arm + gesture field, parallel to the sender-center -> target direction
    dr = placed[target].r_c - (provisional_center[0] * size + 0.5)
    dc = placed[target].c_c - (provisional_center[1] * size + 0.5)
    dist = math.hypot(dr, dc)
    if dist < 4.0:
        return None
    arm = _build_arm(
        rng, size, body_r, body_c, body_h, body_w,
        (dr / dist, dc / dist), z_s, placed[target].z,
    )
    if arm is None:
        return None
    segments, arm_mask, gesture, arm_depth = arm
    arm_sel = arm_mask & (depth_raw > arm_depth)
    image[arm_sel] = _ARM_RGB
    depth_raw[arm_sel] = arm_depth[arm_sel]
    sender_pix = sender_pix | arm_sel
    depth_norm = znorm(depth_raw)

    # the arm moved the sender's mean position: the phrase must still resolve
    # to the same object with the final pose
    sender_center = _mask_mean_coords(sender_pix, depth_norm)
    res = resolve_referent(color_idx, shape_idx, rel_idx, sender_center, forward, objects)
    if res is None or res.index != target or not _relation_is_valid(rel_idx, res, cfg.resolver_margin):
        return None

    gt_box = placed[target].box.copy()
    target_coord = _box_mean_coords(gt_box, depth_norm)
    pointing = target_coord - sender_center
    norm = float(np.linalg.norm(pointing))
    if norm < 0.03:  # degenerate supervision: box sits on the sender
        return None
    pointing = pointing / norm

    sample = SceneSample(
        image=image.astype(np.float32),
        depth=depth_norm.astype(np.float32),
        sender_mask=sender_pix.astype(np.uint8),
        gesture_field=gesture.astype(np.float32),
        tokens=cfg.token_ids(color_idx, shape_idx, rel_idx),
        gt_box=gt_box,
        pose=ScenePose(
            sender_center=sender_center,
            body_orientation=forward,
            pointing_direction=pointing,
            arm_segments=segments,
        ),
        objects=objects,
        sample_id=f"scene_{seed:08d}",
        rng_seed=seed,
    )
    return sample


def _retry_colinear(rng, cfg, placed, line, sender_box):
    size = cfg.image_size
    first = placed[0]
    others = [placed[0]] + placed[2:]
    for _ in range(cfg.max_place_attempts):
        radius = float(rng.uniform(*cfg.radius_range)) * size
        lo, hi = radius + 2.0, size - radius - 2.0
        (r_s, c_s), (r_a, c_a) = line
        t = float(rng.uniform(1.35, 1.95))
        r_c = r_s + t * (r_a - r_s) + float(rng.uniform(-0.02, 0.02)) * size
        c_c = c_s + t * (c_a - c_s) + float(rng.uniform(-0.02, 0.02)) * size
        if not (lo <= r_c <= hi and lo <= c_c <= hi):
            continue
        z = float(rng.uniform(0.12, 0.95))
        if abs(z - first.z) < 0.25:
            continue
        box = np.array(
            [
                max(int(math.floor(c_c - radius)), 0),
                max(int(math.floor(r_c - radius)), 0),
                min(int(math.ceil(c_c + radius)), size),
                min(int(math.ceil(r_c + radius)), size),
            ],
            dtype=np.int64,
        )
        if _box_iou(box, sender_box) > cfg.max_box_iou:
            continue
        if any(_box_iou(box, p.box) > cfg.max_box_iou for p in others):
            continue
        mask = _shape_mask(cfg.shapes[first.shape_idx], size, r_c, c_c, radius)
        if not mask.any():
            continue
        return _Placed(first.color_idx, first.shape_idx, r_c, c_c, radius, z, box, mask)
    return None


def _choose_phrase(rng, cfg, objects, sender_center, forward):
    """Pick a (color, shape, relation, target) with a unique, margin-safe referent.

    Only categories with at least one duplicate are eligible, so the relation
    word always carries information.
    """
    by_cat: dict[tuple[int, int], list[int]] = {}
    for i, o in enumerate(objects):
        by_cat.setdefault((o.color_idx, o.shape_idx), []).append(i)
    options = []
    for (ci, si), ids in by_cat.items():
        if len(ids) < 2:
            continue
        for rel_idx in range(len(RELATIONS)):
            res = resolve_referent(ci, si, rel_idx, sender_center, forward, objects)
            if res is not None and _relation_is_valid(rel_idx, res, cfg.resolver_margin):
                options.append((ci, si, rel_idx, res.index))
    if not options:
        return None
    return options[int(rng.integers(len(options)))]


def _build_arm(rng, size, body_r, body_c, body_h, body_w, point_dir, z_s, z_target):
    """Arm segments parallel to the sender-center -> target direction.

    The painted depth runs from the shoulder's to the target's depth along the
    arm, so the full 3D pointing direction is observable from the sender's
    pixels alone.
    """
    shoulder_r = body_r - 0.36 * body_h
    ur, uc = point_dir
    shoulder_c = body_c + (body_w / 2) * (1.0 if uc >= 0 else -1.0)
    # keep the wrist inside the frame
    reach = 0.42 * size
    margin = 2.0
    for end, direction in ((shoulder_r, ur), (shoulder_c, uc)):
        if direction > 1e-9:
            reach = min(reach, (size - margin - end) / direction)
        elif direction < -1e-9:
            reach = min(reach, (margin - end) / direction)
    if reach < 0.08 * size:
        return None
    perp_r, perp_c = -uc, ur
    bend = 0.05 * reach * (1.0 if rng.uniform() < 0.5 else -1.0)
    elbow_r = shoulder_r + 0.45 * reach * ur + bend * perp_r
    elbow_c = shoulder_c + 0.45 * reach * uc + bend * perp_c
    wrist_r = shoulder_r + reach * ur
    wrist_c = shoulder_c + reach * uc
    pts = np.array(
        [
            [shoulder_r, shoulder_c, elbow_r, elbow_c],
            [elbow_r, elbow_c, wrist_r, wrist_c],
        ],
        dtype=np.float64,
    )
    if (pts.reshape(-1, 2) < 0).any() or (pts.reshape(-1, 2) > size).any():
        return None

    seg_z = ((z_s, z_s + 0.45 * (z_target - z_s)), (z_s + 0.45 * (z_target - z_s), z_target))

    thickness = max(1.8, 0.04 * size)
    gesture = np.zeros((size, size, 3), dtype=np.float64)
    arm_mask = np.zeros((size, size), dtype=bool)
    arm_depth = np.full((size, size), np.inf)
    for (r0, c0, r1, c1), (z0, z1) in zip(pts, seg_z):
        seg, t = _segment_mask(size, r0, c0, r1, c1, thickness)
        arm_mask |= seg
        arm_depth[seg] = z0 + t[seg] * (z1 - z0)
        length = math.hypot(r1 - r0, c1 - c0)
        if length < 1e-9:
            continue
        gesture[seg, 0] = (r1 - r0) / length
        gesture[seg, 1] = (c1 - c0) / length
        gesture[seg, 2] = 1.0
    return pts, arm_mask, gesture, arm_depth


# ---------------------------------------------------------------------------
# transforms and checks


def horizontal_flip(sample: SceneSample) -> SceneSample:
    """Mirror a scene left-right, keeping every ground-truth channel consistent.

    Grids flip exactly; boxes mirror via W - x; normalized positions mirror via
    (W-1)/W - y; direction y-components negate; left/right tokens swap.
    """
    w = sample.depth.shape[1]
    k = (w - 1) / w

    gesture = np.flip(sample.gesture_field, axis=1).copy()
    gesture[..., 1] = -gesture[..., 1]

    tokens = sample.tokens.copy()
    left = tokens == LEFT_ID
    right = tokens == RIGHT_ID
    tokens[left] = RIGHT_ID
    tokens[right] = LEFT_ID

    def flip_box(box: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = box.tolist()
        return np.array([w - x1, y0, w - x0, y1], dtype=np.int64)

    def flip_point(p: np.ndarray) -> np.ndarray:
        q = p.copy()
        q[1] = k - q[1]
        return q

    def flip_direction(d: np.ndarray) -> np.ndarray:
        q = d.copy()
        q[1] = -q[1]
        return q

    segments = sample.pose.arm_segments.copy()
    segments[:, 1] = (w - 1) - segments[:, 1]
    segments[:, 3] = (w - 1) - segments[:, 3]

    return SceneSample(
        image=np.flip(sample.image, axis=1).copy(),
        depth=np.flip(sample.depth, axis=1).copy(),
        sender_mask=np.flip(sample.sender_mask, axis=1).copy(),
        gesture_field=gesture,
        tokens=tokens,
        gt_box=flip_box(sample.gt_box),
        pose=ScenePose(
            sender_center=flip_point(sample.pose.sender_center),
            body_orientation=flip_direction(sample.pose.body_orientation),
            pointing_direction=flip_direction(sample.pose.pointing_direction),
            arm_segments=segments,
        ),
        objects=tuple(
            replace(o, center=flip_point(o.center), box=flip_box(o.box))
            for o in sample.objects
        ),
        sample_id=sample.sample_id,
        rng_seed=sample.rng_seed,
    )


def samples_equal(a: SceneSample, b: SceneSample, pose_atol: float = 0.0) -> bool:
    """Field-for-field equality; pose floats compared with ``pose_atol``."""
    arrays = [
        (a.image, b.image), (a.depth, b.depth), (a.sender_mask, b.sender_mask),
        (a.gesture_field, b.gesture_field), (a.tokens, b.tokens), (a.gt_box, b.gt_box),
    ]
    if not all(np.array_equal(x, y) for x, y in arrays):
        return False
    if a.sample_id != b.sample_id or a.rng_seed != b.rng_seed:
        return False
    if len(a.objects) != len(b.objects):
        return False
    for oa, ob in zip(a.objects, b.objects):
        if oa.color_idx != ob.color_idx or oa.shape_idx != ob.shape_idx:
            return False
        if not np.array_equal(oa.box, ob.box):
            return False
        if not np.allclose(oa.center, ob.center, rtol=0.0, atol=pose_atol):
            return False
    pose_pairs = [
        (a.pose.sender_center, b.pose.sender_center),
        (a.pose.body_orientation, b.pose.body_orientation),
        (a.pose.pointing_direction, b.pose.pointing_direction),
        (a.pose.arm_segments, b.pose.arm_segments),
    ]
    return all(np.allclose(x, y, rtol=0.0, atol=pose_atol) for x, y in pose_pairs)


def pointing_ray_hits_box(
    pose: ScenePose, box: np.ndarray, image_size: int, dilation: float = 0.1
) -> bool:
    """Does the projected pointing ray pass within the dilated target box?"""
    pad = dilation * image_size
    x0, y0, x1, y1 = box.astype(np.float64).tolist()
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    start_r = pose.sender_center[0] * image_size + 0.5
    start_c = pose.sender_center[1] * image_size + 0.5
    dr = pose.pointing_direction[0] * image_size
    dc = pose.pointing_direction[1] * image_size
    for t in np.linspace(0.0, 3.0, 1200):
        r, c = start_r + t * dr, start_c + t * dc
        if x0 <= c <= x1 and y0 <= r <= y1:
            return True
    return False
