"""Pluggable face-detection backends.

Real detector models are external artifacts; what ships in-tree is the
registry, the common result type, and a fixture detector that reads sidecar
landmark files so the whole pipeline is testable offline. Backends register
by name and are selected via the ``--detector`` CLI flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DetectorError
from .geometry import FaceBox, FaceMesh


@dataclass(frozen=True)
class DetectedFace:
    box: FaceBox
    mesh: FaceMesh


class FaceDetector:
    """Base class for detection backends.

    ``reentrant`` declares whether one instance may serve concurrent calls;
    the fixture detector is stateless and therefore reentrant.
    """

    name: str = "abstract"
    reentrant: bool = False

    def detect(self, image: np.ndarray, sidecar_path: Path | None = None) -> list[DetectedFace]:
        raise NotImplementedError


_REGISTRY: dict[str, Callable[[], FaceDetector]] = {}


def register_detector(name: str, factory: Callable[[], FaceDetector]) -> None:
    _REGISTRY[name] = factory


def get_detector(name: str) -> FaceDetector:
    if name not in _REGISTRY:
        raise DetectorError(name, f"not registered; available: {sorted(_REGISTRY)}")
    return _REGISTRY[name]()


def available_detectors() -> list[str]:
    return sorted(_REGISTRY)


def _mesh_from_json(data: dict, where: str) -> FaceMesh:
    if "points" not in data or "semantic_index" not in data:
        raise ValueError(f"{where}: face entry needs 'points' and 'semantic_index'")
    points = np.asarray(data["points"], dtype=np.float64)
    semantic = {str(k): int(v) for k, v in data["semantic_index"].items()}
    return FaceMesh(points=points, semantic_index=semantic)


class FixtureDetector(FaceDetector):
    """Reads faces from a sidecar landmark JSON instead of running a model.

    Accepted sidecar layouts: a single face object ``{"points": ...,
    "semantic_index": ..., "box": [x, y, w, h]?}`` or ``{"faces": [...]}``
    with zero or more such objects. A missing ``box`` defaults to the whole
    image (the common fixture case where the image is the face crop).
    """

    name = "fixture"
    reentrant = True

    def detect(self, image: np.ndarray, sidecar_path: Path | None = None) -> list[DetectedFace]:
        if sidecar_path is None:
            raise DetectorError(self.name, "requires a sidecar landmark file path")
        sidecar_path = Path(sidecar_path)
        if not sidecar_path.exists():
            raise DetectorError(self.name, f"sidecar file not found: {sidecar_path}")
        try:
            data = json.loads(sidecar_path.read_text())
        except json.JSONDecodeError as exc:
            raise DetectorError(
                self.name, f"sidecar {sidecar_path} is not valid JSON: {exc.msg}"
            ) from exc

        entries = data["faces"] if isinstance(data, dict) and "faces" in data else [data]
        h, w = image.shape[:2]
        faces = []
        for k, entry in enumerate(entries):
            try:
                mesh = _mesh_from_json(entry, f"{sidecar_path} face {k}")
            except (ValueError, KeyError, TypeError) as exc:
                raise DetectorError(self.name, str(exc)) from exc
            if "box" in entry:
                bx, by, bw, bh = entry["box"]
                box = FaceBox(bx, by, bw, bh).clamped(w, h)
            else:
                box = FaceBox(0.0, 0.0, float(w), float(h))
            faces.append(DetectedFace(box=box, mesh=mesh))
        return faces


register_detector("fixture", FixtureDetector)


def detect_face(
    image: np.ndarray,
    detector: FaceDetector,
    sidecar_path: Path | None = None,
) -> list[DetectedFace]:
    """Run a detection backend, wrapping any failure with the backend name."""
    if image is None or image.size == 0:
        raise DetectorError(getattr(detector, "name", "?"), "input image is empty")
    try:
        return detector.detect(image, sidecar_path=sidecar_path)
    except DetectorError:
        raise
    except Exception as exc:
        raise DetectorError(getattr(detector, "name", "?"), str(exc)) from exc


def write_sidecar(path: str | Path, mesh: FaceMesh, box: FaceBox | None = None) -> Path:
    """Write a single-face sidecar landmark file readable by FixtureDetector."""
    path = Path(path)
    entry: dict = {
        "points": mesh.points.tolist(),
        "semantic_index": dict(mesh.semantic_index),
    }
    if box is not None:
        entry["box"] = [box.x, box.y, box.w, box.h]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(entry))
    return path
