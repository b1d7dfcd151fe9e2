"""Deep feature extractor handles: the small CNN and the residual transfer
backbone, plus per-layer feature-map inspection and PNG export.

The residual backbone's pretrained weights are an external artifact loaded
from an ``.npz`` file through :class:`ResidualTransferBackbone`; a seeded
stub-weight generator ships in-tree so tests and demos need no download.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import kernels, smallcnn
from .config import PipelineConfig
from .errors import CheckpointError, ConfigError, SaferError, ShapeError
from .imaging import resize, save_image


class BackboneHandle:
    """Common interface of all deep feature extractors.

    ``layer_catalog`` is the ordered list of inspectable layers; integer
    layer ids index into it 1-based, strings must match an entry exactly.
    """

    kind: str
    output_dim: int
    layer_catalog: tuple[str, ...]

    def forward(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def activations(self, image: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError


class SmallCNNBackbone(BackboneHandle):
    kind = "small_cnn"

    def __init__(self, params: smallcnn.SmallCNNParams):
        self.params = params
        self.output_dim = params.output_dim
        self.layer_catalog = tuple(f"conv{k + 1}" for k in range(params.n_layers))

    @classmethod
    def from_config(cls, config: PipelineConfig, rng: np.random.Generator,
                    out_dim: int | None = None) -> "SmallCNNBackbone":
        params = smallcnn.init_small_cnn(
            config.image_size,
            config.cnn_channels,
            out_dim if out_dim is not None else config.deep_face_dim,
            rng,
        )
        return cls(params)

    def forward(self, image: np.ndarray) -> np.ndarray:
        return smallcnn.forward(self.params, image)

    def activations(self, image: np.ndarray) -> dict[str, np.ndarray]:
        return smallcnn.conv_activations(self.params, image)


class ResidualTransferBackbone(BackboneHandle):
    """Residual network with skip connections, weights from an external file.

    Structure: a stem convolution followed by residual blocks of two 3x3
    same-padding convolutions each, global average pooling, and a projection
    to ``output_dim``. Inputs are resized to the network's internal
    resolution. Weights are frozen; only the fusion head trains on top.
    """

    kind = "residual_transfer"

    def __init__(self, weights_path: str | Path):
        path = Path(weights_path)
        if not path.exists():
            raise CheckpointError(f"backbone weights file not found: {path}")
        try:
            data = np.load(path)
            self.channels = int(data["channels"])
            self.blocks = int(data["blocks"])
            self.internal_size = int(data["internal_size"])
            self.stem_w = data["stem_w"]
            self.stem_b = data["stem_b"]
            self.block_weights = [
                (data[f"block{k}_conv1_w"], data[f"block{k}_conv1_b"],
                 data[f"block{k}_conv2_w"], data[f"block{k}_conv2_b"])
                for k in range(self.blocks)
            ]
            self.proj_w = data["proj_w"]
            self.proj_b = data["proj_b"]
        except (KeyError, ValueError, OSError) as exc:
            raise CheckpointError(f"corrupt backbone weights file {path}: {exc}") from exc
        self.output_dim = int(self.proj_w.shape[0])
        n_convs = 1 + 2 * self.blocks
        self.layer_catalog = tuple(f"conv{k + 1}" for k in range(n_convs))

    def _conv_same(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        pad = (w.shape[0] - 1) // 2
        xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
        return kernels.conv2d_valid(xp, w, b)

    def _run(self, image: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError(f"expected (H, W, 3) image, got {image.shape}")
        x = resize(image, self.internal_size)
        acts: dict[str, np.ndarray] = {}
        layer = 1
        x = np.maximum(self._conv_same(x, self.stem_w, self.stem_b), 0.0)
        acts[f"conv{layer}"] = x
        for w1, b1, w2, b2 in self.block_weights:
            h = np.maximum(self._conv_same(x, w1, b1), 0.0)
            layer += 1
            acts[f"conv{layer}"] = h
            h2 = self._conv_same(h, w2, b2)
            x = np.maximum(h2 + x, 0.0)
            layer += 1
            acts[f"conv{layer}"] = x
        pooled = x.mean(axis=(0, 1))
        vec = self.proj_w @ pooled + self.proj_b
        return vec, acts

    def forward(self, image: np.ndarray) -> np.ndarray:
        vec, _ = self._run(image)
        return vec

    def activations(self, image: np.ndarray) -> dict[str, np.ndarray]:
        _, acts = self._run(image)
        return acts


def write_stub_residual_weights(
    path: str | Path,
    output_dim: int,
    channels: int = 4,
    blocks: int = 25,
    internal_size: int = 32,
    seed: int = 0,
) -> Path:
    """Generate a deterministic weights file for the residual backbone.

    Defaults give a 51-conv catalog, deep enough for the usual layer-10/20/
    30/40 feature-map inspection.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {
        "channels": np.array(channels),
        "blocks": np.array(blocks),
        "internal_size": np.array(internal_size),
        "stem_w": rng.normal(0, np.sqrt(2.0 / (9 * 3)), size=(3, 3, 3, channels)),
        "stem_b": np.zeros(channels),
        "proj_w": rng.normal(0, np.sqrt(1.0 / channels), size=(output_dim, channels)),
        "proj_b": np.zeros(output_dim),
    }
    scale = np.sqrt(2.0 / (9 * channels)) * 0.5
    for k in range(blocks):
        arrays[f"block{k}_conv1_w"] = rng.normal(0, scale, size=(3, 3, channels, channels))
        arrays[f"block{k}_conv1_b"] = np.zeros(channels)
        arrays[f"block{k}_conv2_w"] = rng.normal(0, scale, size=(3, 3, channels, channels))
        arrays[f"block{k}_conv2_b"] = np.zeros(channels)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)
    return path


def build_backbone(
    config: PipelineConfig,
    rng: np.random.Generator,
    weights_path: str | Path | None = None,
    out_dim: int | None = None,
) -> BackboneHandle:
    want = out_dim if out_dim is not None else config.deep_face_dim
    if config.backbone_kind == "small_cnn":
        return SmallCNNBackbone.from_config(config, rng, out_dim=want)
    if config.backbone_kind == "residual_transfer":
        if weights_path is None:
            raise ConfigError("residual_transfer backbone requires a weights file path")
        handle = ResidualTransferBackbone(weights_path)
        if handle.output_dim != want:
            raise ConfigError(
                f"backbone weights produce dim {handle.output_dim}, config expects {want}"
            )
        return handle
    raise ConfigError(f"unknown backbone kind {config.backbone_kind!r}")


def transfer_features(handle: BackboneHandle, image: np.ndarray) -> np.ndarray:
    """Frozen-backbone feature extraction through a loaded handle."""
    if handle.kind != "residual_transfer":
        raise ConfigError(
            f"transfer_features requires a residual_transfer handle, got {handle.kind!r}"
        )
    return handle.forward(image)


def _resolve_layer_ids(handle: BackboneHandle, layer_ids: list) -> list[str]:
    resolved = []
    for lid in layer_ids:
        if isinstance(lid, (int, np.integer)):
            if not (1 <= lid <= len(handle.layer_catalog)):
                raise SaferError(
                    f"layer id {lid} out of range; valid ids: 1..{len(handle.layer_catalog)} "
                    f"({handle.layer_catalog[0]}..{handle.layer_catalog[-1]})"
                )
            resolved.append(handle.layer_catalog[lid - 1])
        else:
            if lid not in handle.layer_catalog:
                raise SaferError(
                    f"unknown layer id {lid!r}; valid ids: {list(handle.layer_catalog)}"
                )
            resolved.append(str(lid))
    return resolved


def feature_maps(handle: BackboneHandle, image: np.ndarray, layer_ids: list) -> dict[str, np.ndarray]:
    """Per-layer activation grids, each channel min-max scaled to [0, 1].

    A constant channel scales to all zeros (min-max guard). Returned grids
    keep the layer's spatial dimensions, shape (H, W, C).
    """
    names = _resolve_layer_ids(handle, layer_ids)
    acts = handle.activations(image)
    out: dict[str, np.ndarray] = {}
    for name in names:
        grid = acts[name]
        lo = grid.min(axis=(0, 1), keepdims=True)
        hi = grid.max(axis=(0, 1), keepdims=True)
        span = hi - lo
        scaled = np.where(span > 0, (grid - lo) / np.where(span > 0, span, 1.0), 0.0)
        out[name] = scaled
    return out


def export_feature_maps(
    handle: BackboneHandle,
    image: np.ndarray,
    layer_ids: list,
    out_dir: str | Path,
    sample_id: str,
    channels: list[int] | None = None,
) -> list[Path]:
    """Write feature maps as grayscale PNGs named <sample_id>_layer<k>_ch<c>.png."""
    out_dir = Path(out_dir)
    maps = feature_maps(handle, image, layer_ids)
    written = []
    for name, grid in maps.items():
        layer_no = handle.layer_catalog.index(name) + 1
        chans = channels if channels is not None else range(grid.shape[2])
        for c in chans:
            if not (0 <= c < grid.shape[2]):
                raise SaferError(
                    f"channel {c} out of range for layer {name} with {grid.shape[2]} channels"
                )
            path = out_dir / f"{sample_id}_layer{layer_no}_ch{c}.png"
            save_image(path, grid[:, :, c])
            written.append(path)
    return written
