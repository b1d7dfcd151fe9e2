"""Fixture detector, sidecar round-trips, synthetic generator as oracle."""

import json

import numpy as np
import pytest

from safer.detectors import FixtureDetector, detect_face, get_detector, write_sidecar
from safer.errors import DetectorError
from safer.fixtures import FacePose, render_face, synth_face_mesh
from safer.geometry import FaceBox


def test_fixture_round_trip(tmp_path):
    mesh = synth_face_mesh()
    img = render_face(mesh, size=32)
    sidecar = write_sidecar(tmp_path / "face.json", mesh)
    detector = FixtureDetector()
    faces = detect_face(img, detector, sidecar_path=sidecar)
    assert len(faces) == 1
    np.testing.assert_allclose(faces[0].mesh.points, mesh.points, atol=1e-12)
    assert faces[0].mesh.semantic_index == mesh.semantic_index
    assert (faces[0].box.w, faces[0].box.h) == (32.0, 32.0)


def test_empty_sidecar_gives_empty_list(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text(json.dumps({"faces": []}))
    faces = detect_face(np.zeros((16, 16, 3)), FixtureDetector(), sidecar_path=path)
    assert faces == []


def test_sidecar_with_box(tmp_path):
    mesh = synth_face_mesh()
    sidecar = write_sidecar(tmp_path / "f.json", mesh, box=FaceBox(4, 6, 10, 12))
    faces = detect_face(np.zeros((32, 32, 3)), FixtureDetector(), sidecar_path=sidecar)
    box = faces[0].box
    assert (box.x, box.y, box.w, box.h) == (4, 6, 10, 12)


def test_malformed_sidecar_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DetectorError, match="fixture"):
        detect_face(np.zeros((8, 8, 3)), FixtureDetector(), sidecar_path=path)


def test_missing_sidecar_error(tmp_path):
    with pytest.raises(DetectorError, match="not found"):
        detect_face(np.zeros((8, 8, 3)), FixtureDetector(),
                    sidecar_path=tmp_path / "absent.json")


def test_registry():
    det = get_detector("fixture")
    assert det.name == "fixture"
    assert det.reentrant
    with pytest.raises(DetectorError, match="available"):
        get_detector("blaze")


def test_empty_image_rejected(tmp_path):
    with pytest.raises(DetectorError, match="empty"):
        detect_face(np.zeros((0, 0, 3)), FixtureDetector(), sidecar_path=None)


def test_generator_is_its_own_oracle():
    # mesh keypoints equal the pose inputs they were built from
    pose = FacePose(eye_y=0.42, eye_spacing=0.3, mouth_y=0.7, mouth_width=0.24)
    mesh = synth_face_mesh(pose)
    el = mesh.eye_center("left")
    er = mesh.eye_center("right")
    np.testing.assert_allclose(el, [0.5 - 0.15, 0.42], atol=1e-12)
    np.testing.assert_allclose(er, [0.5 + 0.15, 0.42], atol=1e-12)
    np.testing.assert_allclose(
        mesh.keypoint("lip_corner_left"), [0.5 - 0.12, 0.7], atol=1e-12)
    assert len(mesh.points) >= 68


def test_detector_determinism(tmp_path):
    mesh = synth_face_mesh()
    img = render_face(mesh, size=24)
    sidecar = write_sidecar(tmp_path / "f.json", mesh)
    det = FixtureDetector()
    a = detect_face(img, det, sidecar_path=sidecar)
    b = detect_face(img, det, sidecar_path=sidecar)
    np.testing.assert_array_equal(a[0].mesh.points, b[0].mesh.points)
