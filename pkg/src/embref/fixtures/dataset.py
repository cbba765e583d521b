"""On-disk dataset format: one npz per scene plus a JSON manifest.

Layout::

    <root>/manifest.json
    <root>/train/<sample_id>.npz
    <root>/test/<sample_id>.npz

The manifest records each sample's relative path and sha256, the vocabulary,
and the full generator config, so a dataset is reproducible and tamper-evident.
Reads are lazy: ``DatasetReader`` loads one sample at a time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .scenes import GeneratorConfig, ScenePose, SceneObject, SceneSample, generate_scene

SPLITS = ("train", "test")


class DatasetError(RuntimeError):
    pass


class MissingSampleError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class VocabularyError(DatasetError):
    pass


@dataclass
class DatasetManifest:
    splits: dict[str, list[dict]]          # split -> [{"sample_id", "path", "sha256"}]
    vocabulary: dict[str, int]
    generator_config: dict

    def sample_ids(self, split: str) -> list[str]:
        return [e["sample_id"] for e in self.splits[split]]


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sample_arrays(sample: SceneSample) -> dict[str, np.ndarray]:
    return {
        "image": sample.image,
        "depth": sample.depth,
        "sender_mask": sample.sender_mask,
        "gesture_field": sample.gesture_field,
        "tokens": sample.tokens,
        "gt_box": sample.gt_box,
        "sender_center": sample.pose.sender_center,
        "body_orientation": sample.pose.body_orientation,
        "pointing_direction": sample.pose.pointing_direction,
        "arm_segments": sample.pose.arm_segments,
        "obj_color_idx": np.array([o.color_idx for o in sample.objects], dtype=np.int64),
        "obj_shape_idx": np.array([o.shape_idx for o in sample.objects], dtype=np.int64),
        "obj_centers": np.stack([o.center for o in sample.objects]),
        "obj_boxes": np.stack([o.box for o in sample.objects]),
        "rng_seed": np.array(sample.rng_seed, dtype=np.int64),
    }


def _sample_from_arrays(data, sample_id: str) -> SceneSample:
    objects = tuple(
        SceneObject(
            color_idx=int(ci),
            shape_idx=int(si),
            center=center,
            box=box,
        )
        for ci, si, center, box in zip(
            data["obj_color_idx"], data["obj_shape_idx"],
            data["obj_centers"], data["obj_boxes"],
        )
    )
    return SceneSample(
        image=data["image"],
        depth=data["depth"],
        sender_mask=data["sender_mask"],
        gesture_field=data["gesture_field"],
        tokens=data["tokens"],
        gt_box=data["gt_box"],
        pose=ScenePose(
            sender_center=data["sender_center"],
            body_orientation=data["body_orientation"],
            pointing_direction=data["pointing_direction"],
            arm_segments=data["arm_segments"],
        ),
        objects=objects,
        sample_id=sample_id,
        rng_seed=int(data["rng_seed"]),
    )


def write_dataset(
    root: str | Path,
    split_samples: dict[str, Iterable[SceneSample]],
    generator_config: GeneratorConfig,
) -> DatasetManifest:
    """Write samples and the manifest; returns the manifest."""
    root = Path(root)
    vocabulary = generator_config.vocabulary()
    splits: dict[str, list[dict]] = {}
    seen: set[str] = set()
    for split, samples in split_samples.items():
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for sample in samples:
            if sample.sample_id in seen:
                raise DatasetError(f"duplicate sample_id {sample.sample_id}")
            seen.add(sample.sample_id)
            rel = f"{split}/{sample.sample_id}.npz"
            path = root / rel
            with open(path, "wb") as f:
                np.savez_compressed(f, **_sample_arrays(sample))
            entries.append({"sample_id": sample.sample_id, "path": rel, "sha256": _sha256(path)})
        splits[split] = entries
    manifest = DatasetManifest(
        splits=splits,
        vocabulary=vocabulary,
        generator_config=dataclasses.asdict(generator_config),
    )
    with open(root / "manifest.json", "w") as f:
        json.dump(dataclasses.asdict(manifest), f, indent=1)
    return manifest


class DatasetReader:
    """Lazy sample accessor that verifies checksums and vocabulary on load."""

    def __init__(self, root: str | Path, manifest: DatasetManifest, verify: bool = True):
        self.root = Path(root)
        self.manifest = manifest
        self.verify = verify
        self._index = {
            e["sample_id"]: e for entries in manifest.splits.values() for e in entries
        }

    def load(self, sample_id: str) -> SceneSample:
        entry = self._index.get(sample_id)
        if entry is None:
            raise MissingSampleError(f"sample_id {sample_id!r} not in manifest")
        path = self.root / entry["path"]
        if not path.exists():
            raise MissingSampleError(f"file for sample_id {sample_id!r} missing: {path}")
        if self.verify and _sha256(path) != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for sample_id {sample_id!r}")
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        sample = _sample_from_arrays(arrays, sample_id)
        if sample.tokens.size and int(sample.tokens.max()) >= len(self.manifest.vocabulary):
            raise VocabularyError(
                f"sample_id {sample_id!r} has token ids outside the manifest vocabulary"
            )
        return sample

    def iter_split(self, split: str) -> Iterator[SceneSample]:
        for sample_id in self.manifest.sample_ids(split):
            yield self.load(sample_id)

    def load_split(self, split: str) -> list[SceneSample]:
        return list(self.iter_split(split))


def read_dataset(root: str | Path, verify: bool = True) -> tuple[DatasetManifest, DatasetReader]:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    with open(manifest_path) as f:
        raw = json.load(f)
    manifest = DatasetManifest(
        splits=raw["splits"],
        vocabulary=raw["vocabulary"],
        generator_config=raw["generator_config"],
    )
    return manifest, DatasetReader(root, manifest, verify=verify)


def generator_config_from_manifest(manifest: DatasetManifest) -> GeneratorConfig:
    cfg = dict(manifest.generator_config)
    for key in ("colors", "shapes", "radius_range"):
        cfg[key] = tuple(cfg[key])
    return GeneratorConfig(**cfg)


def generate_dataset(
    root: str | Path,
    train: int,
    test: int,
    config: GeneratorConfig | None = None,
    base_seed: int = 0,
) -> DatasetManifest:
    """Generate and write a train/test dataset with disjoint per-sample seeds."""
    cfg = config if config is not None else GeneratorConfig()

    def gen(start: int, count: int) -> Iterator[SceneSample]:
        for i in range(count):
            yield generate_scene(base_seed + start + i, cfg)

    return write_dataset(
        root,
        {"train": gen(0, train), "test": gen(train, test)},
        cfg,
    )
