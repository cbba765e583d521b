"""Run configuration: model sizes, optimizer schedule, and ablation switches.

Defaults follow the full-scale recipe (512px input, 32x32x256 features, two
transformer encoder layers, RMSProp 1e-4 halved every 10 epochs for 100
epochs, unit loss weights). ``RunConfig.ci()`` is the small CPU profile used
by the test suite.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

ABLATION_LADDER = (
    "use_depth",
    "use_embodied_coords",
    "use_body_vector",
    "use_verbal_attention",
    "use_gesture_attention",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # geometry of the feature pyramid
    image_size: int = 512
    h: int = 32
    w: int = 32
    channels: int = 256
    transformer_layers: int = 2
    heads: int = 8
    film_rounds: int = 3
    pos_embed: str = "learned"           # {"learned", "none"}
    dropout: float = 0.0
    gesture_gate_excludes_sender: bool = False

    # detection head
    anchors: str = "fixed"               # {"fixed", "auto"}
    anchor_rel_sizes: tuple[float, ...] = (0.1, 0.25, 0.5)

    # optimization
    batch_size: int = 16
    optimizer: str = "rmsprop"
    weight_decay: float = 5e-4
    lr: float = 1e-4
    lr_halving_every: int = 10
    total_epochs: int = 100
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    flip_augmentation: bool = True

    # ablation ladder (each flag requires its predecessors)
    use_depth: bool = True
    use_embodied_coords: bool = True
    use_body_vector: bool = True
    use_verbal_attention: bool = True
    use_gesture_attention: bool = True

    # providers
    visual_provider: str = "toy_conv"
    gesture_provider: str = "avg_pool"
    language_provider: str = "embed_mixer"
    depth_provider: str = "fixture_gt"
    segmentation_provider: str = "fixture_gt"

    rng_seed: int = 0

    def __post_init__(self) -> None:
        self.loss_weights = tuple(float(x) for x in self.loss_weights)
        self.anchor_rel_sizes = tuple(float(x) for x in self.anchor_rel_sizes)
        self.validate()

    def validate(self) -> None:
        positive = (
            "image_size", "h", "w", "channels", "transformer_layers", "heads",
            "film_rounds", "batch_size", "weight_decay", "lr",
            "lr_halving_every", "total_epochs",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.image_size % self.h or self.image_size % self.w:
            raise ConfigError("image_size must be divisible by the feature grid")
        if self.image_size // self.h != 16 or self.image_size // self.w != 16:
            raise ConfigError("feature grid must be image_size / 16")
        if self.channels % self.heads:
            raise ConfigError("channels must divide evenly into heads")
        if len(self.loss_weights) != 4:
            raise ConfigError("loss_weights must have 4 entries")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.pos_embed not in ("learned", "none"):
            raise ConfigError(f"bad pos_embed {self.pos_embed!r}")
        if self.anchors not in ("fixed", "auto"):
            raise ConfigError(f"bad anchors mode {self.anchors!r}")
        if self.optimizer != "rmsprop":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        flags = [getattr(self, name) for name in ABLATION_LADDER]
        for i in range(1, len(flags)):
            if flags[i] and not flags[i - 1]:
                raise ConfigError(
                    f"{ABLATION_LADDER[i]} requires {ABLATION_LADDER[i - 1]} "
                    "(ablation flags form a ladder)"
                )

    @property
    def stride(self) -> int:
        return self.image_size // self.h

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.lr_halving_every)

    @classmethod
    def ci(cls, **overrides) -> "RunConfig":
        """Small CPU profile: 128px input, 8x8x64 features, 1 encoder layer."""
        base = dict(
            image_size=128,
            h=8,
            w=8,
            channels=64,
            transformer_layers=1,
            total_epochs=30,
            lr=4e-4,
            anchors="auto",
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def baseline(cls, **overrides) -> "RunConfig":
        """All ablation flags off: 2D coords + gesture map + plain verbal fusion."""
        base = dict(
            use_depth=False,
            use_embodied_coords=False,
            use_body_vector=False,
            use_verbal_attention=False,
            use_gesture_attention=False,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        d["anchor_rel_sizes"] = list(self.anchor_rel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def with_overrides(self, pairs: list[str]) -> "RunConfig":
        """Apply CLI ``key=value`` overrides with type coercion."""
        d = self.to_dict()
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, value = pair.split("=", 1)
            if key not in d:
                raise ConfigError(f"unknown config key {key!r}")
            d[key] = _coerce(value, d[key])
        return self.from_dict(d)


def _coerce(text: str, current):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, (list, tuple)):
        items = [t for t in text.replace(",", " ").split() if t]
        return [float(t) for t in items]
    return text
