"""End-to-end feature extraction: sample record -> FeatureBundle.

One pipeline object owns the detector, the face/background backbones and the
scene backend; it loads the image, crops the face, removes the subject, and
runs all three streams. A precomputed variant replays stored bundles (used
by desk-scale experiments and the feature-file workflow).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import json

import numpy as np

from . import smallcnn
from .backbones import BackboneHandle, SmallCNNBackbone, build_backbone
from .config import PipelineConfig
from .context import (
    BackgroundImage,
    PlaceInfo,
    SceneBackend,
    background_features,
    place_features,
    remove_subject,
)
from .detectors import FaceDetector, detect_face
from .errors import SaferError
from .fusion import FeatureBundle
from .geometry import (
    au_features,
    interocular_distance,
    select_au_centers,
    visible_features,
)
from .imaging import load_image, load_mask, resize
from .labels import EmotionLabel
from .manifest import DatasetManifest, SampleRecord


class FeaturePipeline:
    """Interface every trainer/evaluator consumes."""

    def bundle(self, record: SampleRecord) -> FeatureBundle:
        raise NotImplementedError


class PrecomputedPipeline(FeaturePipeline):
    """Replays bundles from a dict keyed by record id."""

    def __init__(self, bundles: dict[str, FeatureBundle]):
        self._bundles = bundles

    def bundle(self, record: SampleRecord) -> FeatureBundle:
        if record.id not in self._bundles:
            raise SaferError(f"no precomputed features for record {record.id!r}")
        return self._bundles[record.id]


class ImageFeaturePipeline(FeaturePipeline):
    """The real pipeline over images, sidecars and masks on disk."""

    def __init__(
        self,
        config: PipelineConfig,
        manifest: DatasetManifest,
        detector: FaceDetector,
        scene_backend: SceneBackend,
        face_backbone: BackboneHandle | None = None,
        background_params: smallcnn.SmallCNNParams | None = None,
        augment_train: bool = False,
    ):
        self.config = config
        self.manifest = manifest
        self.detector = detector
        self.scene_backend = scene_backend
        self.augment_train = augment_train
        rng = np.random.default_rng(config.seed)
        self.face_backbone = face_backbone or build_backbone(config, rng)
        self.background_params = background_params or smallcnn.init_small_cnn(
            config.image_size, config.cnn_channels, config.background_dim, rng
        )

    def _face_crop(self, image: np.ndarray, box) -> np.ndarray:
        h, w = image.shape[:2]
        clamped = box.clamped(w, h)
        y0, y1 = int(clamped.y), int(np.ceil(clamped.y + clamped.h))
        x0, x1 = int(clamped.x), int(np.ceil(clamped.x + clamped.w))
        return resize(image[y0:y1, x0:x1], self.config.image_size)

    def face_crop_for(self, record: SampleRecord) -> np.ndarray:
        """The (possibly augmented) deep-feature input crop for one record.

        Augmentation applies only to the crop fed to the deep extractor, on
        train-split records, with a per-record deterministic RNG; geometric
        features always come from the detector mesh.
        """
        image = load_image(self.manifest.resolve(record.image_path))
        sidecar = (
            self.manifest.resolve(record.landmark_path)
            if record.landmark_path
            else None
        )
        faces = detect_face(image, self.detector, sidecar_path=sidecar)
        if not faces:
            raise SaferError(f"no face detected in record {record.id!r}")
        crop = self._face_crop(image, faces[0].box)
        return self._maybe_augment(crop, record)

    def _maybe_augment(self, crop: np.ndarray, record: SampleRecord) -> np.ndarray:
        if self.augment_train and record.split == "train":
            from .training import augment, record_rng

            return augment(crop, self.config.augment,
                           record_rng(self.config.seed, record.id))
        return crop

    def bundle(self, record: SampleRecord) -> FeatureBundle:
        image = load_image(self.manifest.resolve(record.image_path))
        sidecar = (
            self.manifest.resolve(record.landmark_path)
            if record.landmark_path
            else None
        )
        faces = detect_face(image, self.detector, sidecar_path=sidecar)
        if not faces:
            raise SaferError(f"no face detected in record {record.id!r}")
        face = faces[0]

        crop = self._maybe_augment(self._face_crop(image, face.box), record)
        face_deep = self.face_backbone.forward(crop)

        mesh = face.mesh
        au = au_features(select_au_centers(mesh), interocular_distance(mesh))
        vis = visible_features(mesh).values

        person_mask = None
        if record.person_mask_path:
            person_mask = load_mask(
                self.manifest.resolve(record.person_mask_path), image.shape[:2]
            )
        bg = remove_subject(
            image,
            person_mask,
            face.box,
            fill_mode=self.config.fill_mode,
            constant_value=self.config.constant_fill_value,
            width_factor=self.config.body_expand_width,
            height_factor=self.config.body_expand_height,
        )
        f_b = background_features(bg, self.background_params)
        f_l, place_info = place_features(bg, self.scene_backend, sample_id=record.id)

        return FeatureBundle(
            face_deep=face_deep,
            au=au,
            visible=vis,
            background=f_b,
            place=f_l,
            place_info=place_info,
        )

    def background_image(self, record: SampleRecord) -> BackgroundImage:
        """Subject-removed scene for one record (explanations, debugging)."""
        image = load_image(self.manifest.resolve(record.image_path))
        sidecar = (
            self.manifest.resolve(record.landmark_path)
            if record.landmark_path
            else None
        )
        faces = detect_face(image, self.detector, sidecar_path=sidecar)
        if not faces:
            raise SaferError(f"no face detected in record {record.id!r}")
        person_mask = None
        if record.person_mask_path:
            person_mask = load_mask(
                self.manifest.resolve(record.person_mask_path), image.shape[:2]
            )
        return remove_subject(
            image, person_mask, faces[0].box,
            fill_mode=self.config.fill_mode,
            constant_value=self.config.constant_fill_value,
            width_factor=self.config.body_expand_width,
            height_factor=self.config.body_expand_height,
        )


def extract_bundles(
    pipeline: FeaturePipeline,
    records: list[SampleRecord],
    workers: int = 1,
) -> dict[str, FeatureBundle]:
    """Extract features for many records, optionally in parallel workers.

    Results are keyed by record id; iteration order does not affect output.
    """
    if workers <= 1:
        return {rec.id: pipeline.bundle(rec) for rec in records}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        bundles = list(pool.map(pipeline.bundle, records))
    return {rec.id: b for rec, b in zip(records, bundles)}


# ------------------------------------------------------------- feature files
# .npz with parallel arrays over records; place info serialized as strings.

def save_features(
    path: str | Path,
    manifest: DatasetManifest,
    bundles: dict[str, FeatureBundle],
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids, labels, splits = [], [], []
    face_deep, au, vis, bg, place = [], [], [], [], []
    categories, attributes, confidences = [], [], []
    for rec in manifest.records:
        if rec.id not in bundles:
            continue
        b = bundles[rec.id]
        ids.append(rec.id)
        labels.append(rec.label.code if rec.label is not None else -1)
        splits.append(rec.split)
        face_deep.append(b.face_deep)
        au.append(b.au)
        vis.append(b.visible)
        bg.append(b.background)
        place.append(b.place)
        categories.append(b.place_info.category)
        attributes.append(json.dumps(list(b.place_info.attributes)))
        confidences.append(b.place_info.confidence)
    if not ids:
        raise SaferError("no bundles to save")
    np.savez(
        path,
        ids=np.array(ids),
        labels=np.array(labels, dtype=np.int64),
        splits=np.array(splits),
        face_deep=np.stack(face_deep),
        au=np.stack(au),
        visible=np.stack(vis),
        background=np.stack(bg),
        place=np.stack(place),
        place_category=np.array(categories),
        place_attributes=np.array(attributes),
        place_confidence=np.array(confidences, dtype=np.float64),
    )
    return path


def load_features(path: str | Path) -> dict[str, FeatureBundle]:
    path = Path(path)
    if not path.exists():
        raise SaferError(f"feature file not found: {path}")
    data = np.load(path, allow_pickle=False)
    bundles: dict[str, FeatureBundle] = {}
    for i, rec_id in enumerate(data["ids"]):
        info = PlaceInfo(
            category=str(data["place_category"][i]),
            attributes=tuple(json.loads(str(data["place_attributes"][i]))),
            confidence=float(data["place_confidence"][i]),
        )
        bundles[str(rec_id)] = FeatureBundle(
            face_deep=data["face_deep"][i],
            au=data["au"][i],
            visible=data["visible"][i],
            background=data["background"][i],
            place=data["place"][i],
            place_info=info,
        )
    return bundles


def _sign_patterns() -> np.ndarray:
    """8x8 Sylvester sign matrix; rows 1..7 are mutually orthogonal class codes."""
    h2 = np.array([[1.0, 1.0], [1.0, -1.0]])
    return np.kron(np.kron(h2, h2), h2)


def toy_bundles(
    config: PipelineConfig,
    per_class: int,
    rng: np.random.Generator,
    signal: str = "face",
    scale: float = 100.0,
    noise: float = 1.0,
) -> tuple[dict[str, FeatureBundle], list[SampleRecord]]:
    """Linearly separable synthetic bundles for desk-scale experiments.

    Each class gets an orthogonal +-sign pattern of magnitude ``scale``
    planted in one stream (``face`` or ``background``); every other slot is
    noise. Returns bundles plus matching train-split records.
    """
    if signal not in ("face", "background"):
        raise SaferError(f"unknown signal stream {signal!r}")
    target_dim = config.deep_face_dim if signal == "face" else config.background_dim
    if target_dim < 8:
        raise SaferError(f"{signal} stream dim must be >= 8 for the class patterns")
    patterns = _sign_patterns() * scale / np.sqrt(8)
    info = PlaceInfo("synthetic", (), 1.0)
    bundles: dict[str, FeatureBundle] = {}
    records: list[SampleRecord] = []
    for label in EmotionLabel:
        for k in range(per_class):
            rid = f"{label.name.lower()}_{k}"
            face = rng.normal(0, noise, size=config.deep_face_dim)
            bg = rng.normal(0, noise, size=config.background_dim)
            target = face if signal == "face" else bg
            target[:8] += patterns[label.code + 1]
            bundles[rid] = FeatureBundle(
                face_deep=face,
                au=np.abs(rng.normal(0, noise, size=66)),
                visible=np.abs(rng.normal(0, noise, size=14)),
                background=bg,
                place=rng.normal(0, noise, size=config.place_dim),
                place_info=info,
            )
            records.append(SampleRecord(id=rid, image_path="synthetic.png",
                                        label=label, split="train"))
    return bundles, records
