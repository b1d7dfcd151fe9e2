"""Shared fixtures: random meshes, synthetic datasets, desk-scale configs.

Also hosts the acceptance-criteria reporter: test_acceptance.py records one
(pass/fail, name) entry per criterion and the terminal-summary hook prints
them after the run, outside pytest's output capture.
"""

from __future__ import annotations

import numpy as np
import pytest

ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, ok in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"  [{'PASS' if ok else 'FAIL'}] {name}")

from safer.config import AugmentParams, PipelineConfig
from safer.geometry import REQUIRED_KEYPOINTS, FaceMesh
from safer.fixtures import make_synthetic_dataset


def random_mesh(rng: np.random.Generator, n_points: int = 72) -> FaceMesh:
    """A random valid mesh: finite points, all semantic keypoints, eye centers
    distinct and (eye, eye, mouth) triangle non-degenerate."""
    while True:
        pts = rng.uniform(0.0, 1.0, size=(n_points, 2))
        idx = rng.permutation(n_points)[: len(REQUIRED_KEYPOINTS)]
        semantic = {name: int(i) for name, i in zip(REQUIRED_KEYPOINTS, idx)}
        try:
            mesh = FaceMesh(points=pts, semantic_index=semantic)
        except Exception:
            continue
        eye_l = mesh.eye_center("left")
        eye_r = mesh.eye_center("right")
        iod = np.linalg.norm(eye_l - eye_r)
        if iod < 0.05:
            continue
        mouth = 0.5 * (mesh.keypoint("lip_upper_center") + mesh.keypoint("lip_lower_center"))
        u, v = eye_r - eye_l, mouth - eye_l
        denom = np.linalg.norm(u) * np.linalg.norm(v)
        if denom < 1e-6 or abs(u[0] * v[1] - u[1] * v[0]) / denom < 1e-3:
            continue
        chin = mesh.keypoint("chin_center")
        if np.linalg.norm(0.5 * (eye_l + eye_r) - chin) < 0.05:
            continue
        return mesh


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def desk_config() -> PipelineConfig:
    """Small dimensions so tests run in milliseconds."""
    return PipelineConfig(
        image_size=16,
        deep_face_dim=6,
        background_dim=5,
        place_dim=4,
        hidden_dim=12,
        cnn_channels=(3, 4),
        epochs=5,
        augment=AugmentParams(0.0, 0.0, 0.0, 0.0),
        seed=7,
    )


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory) -> object:
    root = tmp_path_factory.mktemp("synthset")
    return make_synthetic_dataset(root, per_class=3, seed=11, face_size=48)
