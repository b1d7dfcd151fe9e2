"""Background and place streams: subject removal, background CNN features,
and scene classification through a pluggable backend.

Both context streams must consume the subject-removed image, never the
original; :class:`BackgroundImage` carries that provenance and the feature
extractors refuse anything else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import smallcnn
from .config import PipelineConfig
from .errors import SaferError, SceneBackendError
from .geometry import FaceBox
from .imaging import resize


@dataclass(frozen=True)
class BackgroundImage:
    """Scene image with the subject blanked out.

    ``removed_region`` is the boolean mask that was filled; ``fill_mode``
    records how. The type itself is the provenance tag: only values built by
    :func:`remove_subject` exist.
    """

    pixels: np.ndarray
    removed_region: np.ndarray
    fill_mode: str

    def __post_init__(self) -> None:
        if self.pixels.shape[:2] != self.removed_region.shape:
            raise SaferError(
                f"mask shape {self.removed_region.shape} does not match "
                f"image {self.pixels.shape[:2]}"
            )


@dataclass(frozen=True)
class PlaceInfo:
    category: str
    attributes: tuple[str, ...]
    confidence: float

    def __post_init__(self) -> None:
        if not self.category:
            raise SaferError("place category must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise SaferError(f"place confidence must be in [0,1], got {self.confidence}")

    def to_json_dict(self) -> dict:
        return {
            "category": self.category,
            "attributes": list(self.attributes),
            "confidence": self.confidence,
        }


def expand_face_box(box: FaceBox, image_w: int, image_h: int,
                    width_factor: float, height_factor: float) -> FaceBox:
    """Body-expansion heuristic: grow the face box about its center."""
    cx = box.x + box.w / 2
    cy = box.y + box.h / 2
    new_w = box.w * width_factor
    new_h = box.h * height_factor
    return FaceBox(cx - new_w / 2, cy - new_h / 2, new_w, new_h).clamped(image_w, image_h)


def remove_subject(
    image: np.ndarray,
    person_mask: np.ndarray | None,
    face_box: FaceBox,
    fill_mode: str = "mean_fill",
    constant_value: float = 0.0,
    width_factor: float = 3.0,
    height_factor: float = 6.0,
) -> BackgroundImage:
    """Blank the subject out of the scene.

    Uses the person mask when given; otherwise falls back to the face box
    expanded by the body heuristic (width x3, height x6 by default, clamped
    to the image). Fill value is the mean of the remaining pixels
    (mean_fill) or a constant.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise SaferError("input image is empty")
    h, w = image.shape[:2]

    if person_mask is not None:
        person_mask = np.asarray(person_mask).astype(bool)
        if person_mask.shape != (h, w):
            raise SaferError(
                f"person mask shape {person_mask.shape} does not match image ({h}, {w})"
            )
        region = person_mask
    else:
        box = expand_face_box(face_box, w, h, width_factor, height_factor)
        region = np.zeros((h, w), dtype=bool)
        y0, y1 = int(np.floor(box.y)), int(np.ceil(box.y + box.h))
        x0, x1 = int(np.floor(box.x)), int(np.ceil(box.x + box.w))
        region[max(0, y0):min(h, y1), max(0, x0):min(w, x1)] = True

    if region.all():
        raise SaferError("subject removal covers the entire image; no background remains")

    if fill_mode == "mean_fill":
        fill = image[~region].reshape(-1, image.shape[2]).mean(axis=0)
    elif fill_mode == "constant_fill":
        fill = np.full(image.shape[2], float(constant_value))
    else:
        raise SaferError(f"unknown fill_mode {fill_mode!r}")

    pixels = image.copy()
    pixels[region] = fill
    return BackgroundImage(pixels=pixels, removed_region=region, fill_mode=fill_mode)


def background_features(bg: BackgroundImage, params: smallcnn.SmallCNNParams) -> np.ndarray:
    """Background feature vector F_b via the small CNN (own parameter set)."""
    if not isinstance(bg, BackgroundImage):
        raise SaferError("background stream requires a subject-removed BackgroundImage")
    img = resize(bg.pixels, params.input_size)
    return smallcnn.forward(params, img)


class SceneBackend:
    """Scene classifier interface: deep place features + category/attributes.

    ``classify`` returns the post-final-max-pool activation flattened to the
    backend's feature dim, plus a :class:`PlaceInfo`. Backends declare
    whether they are reentrant.
    """

    name: str = "abstract"
    reentrant: bool = False

    def classify(self, bg: BackgroundImage, sample_id: str | None = None
                 ) -> tuple[np.ndarray, PlaceInfo]:
        raise NotImplementedError


class StubSceneBackend(SceneBackend):
    """Deterministic in-tree scene classifier: pooled image statistics pushed
    through a fixed seeded projection; category from mean brightness."""

    name = "stub"
    reentrant = True

    GRID = 8

    def __init__(self, feature_dim: int, seed: int = 0):
        self.feature_dim = feature_dim
        rng = np.random.default_rng(seed)
        self._proj = rng.normal(0.0, 1.0, size=(feature_dim, self.GRID * self.GRID * 3 // 4))

    def classify(self, bg: BackgroundImage, sample_id: str | None = None
                 ) -> tuple[np.ndarray, PlaceInfo]:
        if not isinstance(bg, BackgroundImage):
            raise SceneBackendError(self.name, "requires a subject-removed BackgroundImage")
        small = resize(bg.pixels, self.GRID * 2)
        # average to the grid, then a final 2x2 max pool, mirroring a
        # conv-stack-then-maxpool feature tap
        pooled = small.reshape(self.GRID, 2, self.GRID, 2, 3).mean(axis=(1, 3))
        half = self.GRID // 2
        maxed = pooled.reshape(half, 2, half, 2, 3).max(axis=(1, 3))
        feats = self._proj @ maxed.reshape(-1)
        brightness = float(bg.pixels.mean())
        if brightness > 0.5:
            info = PlaceInfo("bright_room", ("indoor_lighting", "enclosed_area"),
                             min(1.0, brightness))
        else:
            info = PlaceInfo("dim_room", ("low_light", "enclosed_area"),
                             min(1.0, 1.0 - brightness))
        return feats, info


class FixtureSceneBackend(SceneBackend):
    """Table-driven scene backend: sample id -> {category, attributes,
    confidence} from a JSON file; features are a seeded hash of the id."""

    name = "fixture"
    reentrant = True

    def __init__(self, table_path: str | Path, feature_dim: int):
        table_path = Path(table_path)
        if not table_path.exists():
            raise SceneBackendError(self.name, f"table file not found: {table_path}")
        try:
            self.table = json.loads(table_path.read_text())
        except json.JSONDecodeError as exc:
            raise SceneBackendError(self.name, f"invalid table JSON: {exc.msg}") from exc
        self.feature_dim = feature_dim

    def classify(self, bg: BackgroundImage, sample_id: str | None = None
                 ) -> tuple[np.ndarray, PlaceInfo]:
        if sample_id is None or sample_id not in self.table:
            raise SceneBackendError(self.name, f"no table entry for sample {sample_id!r}")
        entry = self.table[sample_id]
        info = PlaceInfo(
            category=entry["category"],
            attributes=tuple(entry.get("attributes", ())),
            confidence=float(entry.get("confidence", 1.0)),
        )
        digest_seed = abs(hash_id(sample_id)) % (2**32)
        feats = np.random.default_rng(digest_seed).normal(size=self.feature_dim)
        return feats, info


def hash_id(sample_id: str) -> int:
    """Stable (process-independent) integer hash of a sample id."""
    import hashlib

    return int.from_bytes(hashlib.sha256(sample_id.encode()).digest()[:8], "little")


_SCENE_REGISTRY: dict[str, Callable[..., SceneBackend]] = {
    "stub": StubSceneBackend,
    "fixture": FixtureSceneBackend,
}


def get_scene_backend(name: str, config: PipelineConfig,
                      table_path: str | Path | None = None) -> SceneBackend:
    if name == "stub":
        return StubSceneBackend(config.place_dim, seed=config.seed)
    if name == "fixture":
        if table_path is None:
            raise SceneBackendError(name, "fixture backend requires a table path")
        return FixtureSceneBackend(table_path, config.place_dim)
    raise SceneBackendError(name, f"not registered; available: {sorted(_SCENE_REGISTRY)}")


def place_features(
    bg: BackgroundImage,
    scene_backend: SceneBackend,
    sample_id: str | None = None,
) -> tuple[np.ndarray, PlaceInfo]:
    """Place feature vector F_l plus the category/attribute description."""
    if not isinstance(bg, BackgroundImage):
        raise SaferError("place stream requires a subject-removed BackgroundImage")
    try:
        feats, info = scene_backend.classify(bg, sample_id=sample_id)
    except SceneBackendError:
        raise
    except Exception as exc:
        raise SceneBackendError(getattr(scene_backend, "name", "?"), str(exc)) from exc
    return np.asarray(feats, dtype=np.float64), info
