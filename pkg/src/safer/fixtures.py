"""Synthetic face generator and dataset builder.

Every geometric operation in the pipeline can be exercised without any
pretrained model: the generator places the semantic keypoints at known
coordinates (so it is its own oracle for mesh geometry), renders a simple
cartoon face around them, and can assemble whole datasets of labeled scenes
with landmark sidecars, person masks, and a scene-backend fixture table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .detectors import write_sidecar
from .geometry import REQUIRED_KEYPOINTS, FaceBox, FaceMesh
from .imaging import save_image, save_mask, to_uint8
from .labels import EmotionLabel
from .manifest import DatasetManifest, SampleRecord, save_manifest


@dataclass(frozen=True)
class FacePose:
    """Parameters of the synthetic face, in face-crop coordinates ([0,1], y down)."""

    eye_y: float = 0.40
    eye_spacing: float = 0.36
    eye_width: float = 0.11
    eye_height: float = 0.05
    brow_raise: float = 0.08
    mouth_y: float = 0.72
    mouth_width: float = 0.26
    mouth_open: float = 0.06
    nose_y: float = 0.56


def synth_face_mesh(pose: FacePose = FacePose(), extra_points: int = 48) -> FaceMesh:
    """Build a mesh whose semantic keypoints sit exactly at pose-derived spots.

    The 24 semantic keypoints occupy indices 0..23 in REQUIRED_KEYPOINTS
    order; a face-oval ring pads the mesh past the 68-landmark minimum.
    """
    cx = 0.5
    el = np.array([cx - pose.eye_spacing / 2, pose.eye_y])
    er = np.array([cx + pose.eye_spacing / 2, pose.eye_y])
    mouth_c = np.array([cx, pose.mouth_y])

    kp: dict[str, np.ndarray] = {}
    kp["eye_inner_left"] = el + [pose.eye_width / 2, 0]
    kp["eye_outer_left"] = el - [pose.eye_width / 2, 0]
    kp["eye_inner_right"] = er - [pose.eye_width / 2, 0]
    kp["eye_outer_right"] = er + [pose.eye_width / 2, 0]
    kp["eyelid_upper_left"] = el - [0, pose.eye_height / 2]
    kp["eyelid_lower_left"] = el + [0, pose.eye_height / 2]
    kp["eyelid_upper_right"] = er - [0, pose.eye_height / 2]
    kp["eyelid_lower_right"] = er + [0, pose.eye_height / 2]
    kp["brow_center_left"] = el - [0, pose.brow_raise]
    kp["brow_center_right"] = er - [0, pose.brow_raise]
    kp["brow_inner_left"] = kp["brow_center_left"] + [pose.eye_width * 0.7, -0.01]
    kp["brow_outer_left"] = kp["brow_center_left"] - [pose.eye_width * 0.7, 0.01]
    kp["brow_inner_right"] = kp["brow_center_right"] - [pose.eye_width * 0.7, -0.01]
    kp["brow_outer_right"] = kp["brow_center_right"] + [pose.eye_width * 0.7, 0.01]
    kp["cheek_center_left"] = np.array([el[0] - 0.03, (pose.eye_y + pose.mouth_y) / 2])
    kp["cheek_center_right"] = np.array([er[0] + 0.03, (pose.eye_y + pose.mouth_y) / 2])
    kp["nose_tip"] = np.array([cx, pose.nose_y])
    kp["lip_corner_left"] = mouth_c - [pose.mouth_width / 2, 0]
    kp["lip_corner_right"] = mouth_c + [pose.mouth_width / 2, 0]
    kp["lip_upper_center"] = mouth_c - [0, pose.mouth_open / 2]
    kp["lip_lower_center"] = mouth_c + [0, pose.mouth_open / 2]
    kp["below_lip_corner_left"] = kp["lip_corner_left"] + [0, 0.05]
    kp["below_lip_corner_right"] = kp["lip_corner_right"] + [0, 0.05]
    kp["chin_center"] = np.array([cx, pose.mouth_y + 0.16])

    points = [kp[name] for name in REQUIRED_KEYPOINTS]
    semantic_index = {name: i for i, name in enumerate(REQUIRED_KEYPOINTS)}

    # Face-oval ring so the mesh clears the dense-landmark minimum.
    t = np.linspace(0, 2 * np.pi, extra_points, endpoint=False)
    ring = np.column_stack([cx + 0.42 * np.cos(t), 0.52 + 0.45 * np.sin(t)])
    pts = np.vstack([np.stack(points), ring])
    return FaceMesh(points=pts, semantic_index=semantic_index)


def render_face(
    mesh: FaceMesh,
    size: int = 64,
    skin: tuple[float, float, float] = (0.87, 0.72, 0.60),
    background: tuple[float, float, float] = (0.35, 0.45, 0.55),
) -> np.ndarray:
    """Rasterize a cartoon face around the mesh keypoints; float RGB in [0,1]."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    img[:] = to_uint8(np.array(background))

    def px(p: np.ndarray) -> tuple[int, int]:
        return int(round(p[0] * (size - 1))), int(round(p[1] * (size - 1)))

    def kp(name: str) -> np.ndarray:
        return mesh.keypoint(name)

    skin8 = tuple(int(c) for c in to_uint8(np.array(skin)))
    cv2.ellipse(img, (size // 2, int(size * 0.54)),
                (int(size * 0.40), int(size * 0.44)), 0, 0, 360, skin8, -1)

    dark = (40, 30, 30)
    for side in ("left", "right"):
        inner, outer = kp(f"eye_inner_{side}"), kp(f"eye_outer_{side}")
        upper, lower = kp(f"eyelid_upper_{side}"), kp(f"eyelid_lower_{side}")
        center = px(0.5 * (inner + outer))
        ax = max(1, int(abs(outer[0] - inner[0]) * (size - 1) / 2))
        ay = max(1, int(abs(lower[1] - upper[1]) * (size - 1) / 2))
        cv2.ellipse(img, center, (ax, ay), 0, 0, 360, dark, -1)
        cv2.line(img, px(kp(f"brow_inner_{side}")), px(kp(f"brow_outer_{side}")),
                 (60, 40, 30), 1)

    cv2.circle(img, px(kp("nose_tip")), max(1, size // 40), (120, 80, 70), -1)

    mouth_c = 0.5 * (kp("lip_upper_center") + kp("lip_lower_center"))
    mw = np.linalg.norm(kp("lip_corner_right") - kp("lip_corner_left"))
    mh = np.linalg.norm(kp("lip_lower_center") - kp("lip_upper_center"))
    cv2.ellipse(img, px(mouth_c),
                (max(1, int(mw * (size - 1) / 2)), max(1, int(mh * (size - 1) / 2))),
                0, 0, 360, (150, 50, 50), -1)

    return img.astype(np.float64) / 255.0


#: Pose adjustments giving each class a distinct, learnable geometry.
CLASS_POSES: dict[EmotionLabel, FacePose] = {
    EmotionLabel.ANGER: FacePose(brow_raise=0.03, mouth_width=0.20, mouth_open=0.03),
    EmotionLabel.DISGUST: FacePose(brow_raise=0.05, nose_y=0.53, mouth_open=0.04),
    EmotionLabel.FEAR: FacePose(eye_height=0.08, brow_raise=0.11, mouth_open=0.08),
    EmotionLabel.HAPPINESS: FacePose(mouth_width=0.36, mouth_open=0.09, eye_height=0.04),
    EmotionLabel.SADNESS: FacePose(brow_raise=0.10, mouth_width=0.22, mouth_y=0.74),
    EmotionLabel.SURPRISE: FacePose(eye_height=0.09, brow_raise=0.13, mouth_open=0.12,
                                    mouth_width=0.18),
    EmotionLabel.NEUTRAL: FacePose(),
}

#: Scene palette per label so the fixture table has varied place categories.
SCENE_STYLES = (
    ("day care play room", ("no_horizon", "enclosed_area"), (0.75, 0.60, 0.30)),
    ("classroom", ("enclosed_area", "indoor_lighting"), (0.55, 0.55, 0.65)),
    ("park", ("natural_light", "open_area"), (0.35, 0.60, 0.35)),
    ("office", ("enclosed_area", "man_made"), (0.60, 0.60, 0.60)),
)


def jitter_pose(pose: FacePose, rng: np.random.Generator, amount: float = 0.01) -> FacePose:
    return replace(
        pose,
        eye_y=pose.eye_y + rng.uniform(-amount, amount),
        eye_spacing=pose.eye_spacing + rng.uniform(-amount, amount),
        mouth_width=max(0.10, pose.mouth_width + rng.uniform(-amount, amount)),
        mouth_open=max(0.02, pose.mouth_open + rng.uniform(-amount, amount)),
        brow_raise=max(0.02, pose.brow_raise + rng.uniform(-amount, amount)),
    )


def make_scene_sample(
    mesh: FaceMesh,
    scene_color: tuple[float, float, float],
    scene_size: int = 96,
    face_size: int = 48,
    face_origin: tuple[int, int] = (24, 12),
) -> tuple[np.ndarray, FaceBox, np.ndarray]:
    """Compose a face crop onto a colored scene; returns (image, box, person mask)."""
    img = np.zeros((scene_size, scene_size, 3), dtype=np.float64)
    img[:] = scene_color
    # light texture so scene features are not constant
    yy = np.linspace(0, 0.12, scene_size)[:, None, None]
    img = np.clip(img + yy, 0.0, 1.0)

    face = render_face(mesh, size=face_size)
    x0, y0 = face_origin
    img[y0:y0 + face_size, x0:x0 + face_size] = face
    box = FaceBox(float(x0), float(y0), float(face_size), float(face_size))

    mask = np.zeros((scene_size, scene_size), dtype=bool)
    # crude person silhouette: the face crop plus a torso block below it
    mask[y0:y0 + face_size, x0:x0 + face_size] = True
    torso_top = min(scene_size, y0 + face_size)
    torso_w = int(face_size * 1.3)
    tx0 = max(0, x0 - (torso_w - face_size) // 2)
    mask[torso_top:scene_size, tx0:min(scene_size, tx0 + torso_w)] = True
    return img, box, mask


def make_synthetic_dataset(
    root: str | Path,
    per_class: int = 4,
    seed: int = 0,
    face_size: int = 48,
    scenes: bool = True,
    name: str = "synthetic",
) -> DatasetManifest:
    """Build a complete on-disk dataset: images, sidecars, masks, manifest,
    and the scene-backend fixture table (``scene_table.json``)."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    records: list[SampleRecord] = []
    scene_table: dict[str, dict] = {}

    for label in EmotionLabel:
        for k in range(per_class):
            sample_id = f"{label.display_name.lower()}_{k:03d}"
            pose = jitter_pose(CLASS_POSES[label], rng)
            mesh = synth_face_mesh(pose)

            category, attributes, color = SCENE_STYLES[
                int(rng.integers(0, len(SCENE_STYLES)))
            ]
            mask_path = None
            if scenes:
                img, box, person = make_scene_sample(
                    mesh, color, scene_size=face_size * 2, face_size=face_size
                )
                save_mask(root / "masks" / f"{sample_id}.png", person)
                mask_path = f"masks/{sample_id}.png"
                write_sidecar(root / "landmarks" / f"{sample_id}.json", mesh, box=box)
            else:
                img = render_face(mesh, size=face_size)
                write_sidecar(root / "landmarks" / f"{sample_id}.json", mesh)

            save_image(root / "images" / f"{sample_id}.png", img)
            scene_table[sample_id] = {
                "category": category,
                "attributes": list(attributes),
                "confidence": 0.9,
            }
            records.append(
                SampleRecord(
                    id=sample_id,
                    image_path=f"images/{sample_id}.png",
                    label=label,
                    landmark_path=f"landmarks/{sample_id}.json",
                    person_mask_path=mask_path,
                    demographic_tags={"gender": "female" if k % 2 else "male"},
                )
            )

    (root / "scene_table.json").write_text(json.dumps(scene_table, indent=1))
    manifest = DatasetManifest(name=name, records=tuple(records), root=root)
    save_manifest(manifest, root / "manifest.jsonl")
    return manifest
