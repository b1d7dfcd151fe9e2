"""Image feature pipeline over the synthetic dataset; feature-file round trip."""

import numpy as np
import pytest

from safer.config import PipelineConfig
from safer.context import StubSceneBackend, FixtureSceneBackend
from safer.detectors import FixtureDetector
from safer.errors import SaferError
from safer.fusion import StreamMask, assemble
from safer.pipeline import (
    ImageFeaturePipeline,
    extract_bundles,
    load_features,
    save_features,
)


def make_config():
    return PipelineConfig(
        image_size=16, deep_face_dim=8, background_dim=8, place_dim=6,
        hidden_dim=12, cnn_channels=(3, 4), seed=3,
    )


@pytest.fixture
def image_pipeline(synthetic_dataset):
    config = make_config()
    backend = FixtureSceneBackend(synthetic_dataset.root / "scene_table.json",
                                  config.place_dim)
    return ImageFeaturePipeline(config, synthetic_dataset, FixtureDetector(), backend)


def test_bundle_shapes_and_determinism(synthetic_dataset, image_pipeline):
    rec = synthetic_dataset.records[0]
    b1 = image_pipeline.bundle(rec)
    b2 = image_pipeline.bundle(rec)
    assert b1.face_deep.shape == (8,)
    assert b1.au.shape == (66,)
    assert b1.visible.shape == (14,)
    assert b1.background.shape == (8,)
    assert b1.place.shape == (6,)
    np.testing.assert_array_equal(b1.face_deep, b2.face_deep)
    np.testing.assert_array_equal(b1.place, b2.place)
    assert b1.place_info == b2.place_info
    assert b1.place_info.category  # from the fixture table


def test_assembled_width_matches_config(synthetic_dataset, image_pipeline):
    config = make_config()
    rec = synthetic_dataset.records[0]
    f = assemble(image_pipeline.bundle(rec), StreamMask())
    assert f.shape == (config.total_fusion_dim,)


def test_extract_bundles_parallel_matches_serial(synthetic_dataset, image_pipeline):
    records = list(synthetic_dataset.records[:6])
    serial = extract_bundles(image_pipeline, records, workers=1)
    parallel = extract_bundles(image_pipeline, records, workers=4)
    assert set(serial) == set(parallel)
    for rid in serial:
        np.testing.assert_array_equal(serial[rid].au, parallel[rid].au)
        np.testing.assert_array_equal(serial[rid].face_deep, parallel[rid].face_deep)


def test_feature_file_round_trip(tmp_path, synthetic_dataset, image_pipeline):
    records = list(synthetic_dataset.records[:5])
    bundles = extract_bundles(image_pipeline, records)
    path = save_features(tmp_path / "features.npz", synthetic_dataset, bundles)
    loaded = load_features(path)
    assert set(loaded) == set(bundles)
    for rid, bundle in bundles.items():
        np.testing.assert_allclose(loaded[rid].face_deep, bundle.face_deep, atol=1e-12)
        np.testing.assert_allclose(loaded[rid].visible, bundle.visible, atol=1e-12)
        assert loaded[rid].place_info == bundle.place_info


def test_missing_face_errors(tmp_path, synthetic_dataset):
    import json
    from safer.manifest import SampleRecord, DatasetManifest

    (tmp_path / "empty.json").write_text(json.dumps({"faces": []}))
    (tmp_path / "img.png").write_bytes(
        synthetic_dataset.resolve(synthetic_dataset.records[0].image_path).read_bytes()
    )
    manifest = DatasetManifest(
        name="t",
        records=(SampleRecord(id="x", image_path="img.png",
                              landmark_path="empty.json"),),
        root=tmp_path,
    )
    config = make_config()
    pipe = ImageFeaturePipeline(config, manifest, FixtureDetector(),
                                StubSceneBackend(config.place_dim))
    with pytest.raises(SaferError, match="no face"):
        pipe.bundle(manifest.records[0])


def test_augment_train_changes_deep_features_only(synthetic_dataset):
    from dataclasses import replace
    from safer.config import AugmentParams

    config = make_config()
    config.augment = AugmentParams(0.0, 15.0, 0.2, 0.0)
    backend = StubSceneBackend(config.place_dim)
    plain = ImageFeaturePipeline(config, synthetic_dataset, FixtureDetector(), backend)
    augmented = ImageFeaturePipeline(config, synthetic_dataset, FixtureDetector(),
                                     backend, augment_train=True)
    rec = replace(synthetic_dataset.records[0], split="train")
    b_plain = plain.bundle(rec)
    b_aug = augmented.bundle(rec)
    assert np.abs(b_plain.face_deep - b_aug.face_deep).max() > 0
    np.testing.assert_array_equal(b_plain.au, b_aug.au)
    np.testing.assert_array_equal(b_plain.visible, b_aug.visible)
    # deterministic augmentation draw per record
    b_aug2 = augmented.bundle(rec)
    np.testing.assert_array_equal(b_aug.face_deep, b_aug2.face_deep)
    # non-train records are never augmented
    rec_test = replace(rec, split="test")
    np.testing.assert_array_equal(plain.bundle(rec_test).face_deep,
                                  augmented.bundle(rec_test).face_deep)
