"""Pipeline configuration: dimensions, training recipe, augmentation ranges.

A single JSON-serializable dataclass carries every knob the pipeline needs.
Precedence when running the CLI is defaults < config file < command-line
flags; the ``SAFER_CONFIG`` environment variable supplies the default config
file path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

BACKBONE_KINDS = ("small_cnn", "residual_transfer")


@dataclass
class AugmentParams:
    """Ranges for the random training-time augmentations.

    All ranges are symmetric around the identity; setting everything to zero
    turns augmentation into a no-op.
    """

    crop_fraction: float = 0.1     # up to this fraction of each side cropped away
    rotation_degrees: float = 10.0
    brightness_delta: float = 0.1
    contrast_delta: float = 0.1


@dataclass
class PipelineConfig:
    image_size: int = 224
    backbone_kind: str = "small_cnn"

    # Stream output dimensions. The geometric feature lengths (66 + 14) are
    # fixed by construction and not configurable.
    deep_face_dim: int = 256      # D_f
    background_dim: int = 128     # D_b
    place_dim: int = 256          # D_l
    hidden_dim: int = 512         # fusion head hidden width

    # Small-CNN channel widths, one per conv layer (each followed by 2x2 pool).
    cnn_channels: tuple[int, ...] = (32, 64, 128)

    # Stream toggles used when no explicit mask is given: (face, background, place).
    stream_mask_default: tuple[bool, bool, bool] = (True, True, True)

    # Training recipe.
    initial_lr: float = 1e-5
    batch_size: int = 32
    epochs: int = 100
    lr_plateau_patience: int = 5
    lr_decay_factor: float = 0.5
    lr_floor: float = 1e-7
    early_stop_train_acc: float | None = None
    fine_tune_backbones: bool = False

    augment: AugmentParams = field(default_factory=AugmentParams)
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    # Background-stream subject removal.
    fill_mode: str = "mean_fill"              # or "constant_fill"
    constant_fill_value: float = 0.0
    body_expand_width: float = 3.0            # face-box fallback heuristic
    body_expand_height: float = 6.0

    # Explanation generation.
    evidence_threshold: float = 0.15

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.image_size <= 0:
            raise ConfigError(f"image_size must be > 0, got {self.image_size}")
        for name in ("deep_face_dim", "background_dim", "place_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.backbone_kind not in BACKBONE_KINDS:
            raise ConfigError(
                f"backbone_kind must be one of {BACKBONE_KINDS}, got {self.backbone_kind!r}"
            )
        if len(self.split_ratios) != 3:
            raise ConfigError("split_ratios must have exactly 3 entries")
        if any(r < 0 for r in self.split_ratios):
            raise ConfigError("split ratios must be non-negative")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(
                f"split ratios must sum to 1, got {sum(self.split_ratios)!r}"
            )
        if not self.cnn_channels or any(c <= 0 for c in self.cnn_channels):
            raise ConfigError("cnn_channels must be a non-empty tuple of positive ints")
        if self.fill_mode not in ("mean_fill", "constant_fill"):
            raise ConfigError(f"unknown fill_mode {self.fill_mode!r}")
        if not any(self.stream_mask_default):
            raise ConfigError("at least one stream must be enabled by default")

    @property
    def total_fusion_dim(self) -> int:
        """Length of the assembled fusion vector F (fixed slot layout)."""
        from .geometry import AU_FEATURE_LEN, VISIBLE_FEATURE_LEN

        return (
            self.deep_face_dim
            + AU_FEATURE_LEN
            + VISIBLE_FEATURE_LEN
            + self.background_dim
            + self.place_dim
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        d["stream_mask_default"] = list(self.stream_mask_default)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        if "augment" in data and isinstance(data["augment"], dict):
            data["augment"] = AugmentParams(**data["augment"])
        for key in ("cnn_channels", "stream_mask_default", "split_ratios"):
            if key in data:
                data[key] = tuple(data[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def content_hash(self) -> str:
        """Stable hash of the config contents, stored in checkpoints."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
