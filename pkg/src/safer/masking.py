"""Synthetic face-mask occlusion: cover nose, lips, mouth and chin.

The covered region is the convex hull of the lower-face keypoints (nose tip,
lip corners, upper/lower lip centers, chin center, cheek centers), padded by
a margin proportional to the inter-ocular distance, filled with an opaque
color. The goal is information removal for the occlusion study, not
photo-realism.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .detectors import FixtureDetector, detect_face
from .errors import GeometryError, SaferError
from .geometry import FaceBox, FaceMesh, interocular_distance
from .imaging import load_image, save_image
from .manifest import DatasetManifest, SampleRecord, save_manifest

logger = logging.getLogger(__name__)

MASK_KEYPOINTS = (
    "nose_tip",
    "lip_corner_left",
    "lip_corner_right",
    "lip_upper_center",
    "lip_lower_center",
    "chin_center",
    "cheek_center_left",
    "cheek_center_right",
)


@dataclass(frozen=True)
class MaskStyle:
    color: tuple[float, float, float] = (0.25, 0.55, 0.85)
    opacity: float = 1.0
    margin: float = 0.08  # fraction of the inter-ocular distance

    def __post_init__(self) -> None:
        if any(not (0.0 <= c <= 1.0) for c in self.color):
            raise SaferError(f"mask color components must be in [0,1], got {self.color}")
        if not (0.0 < self.opacity <= 1.0):
            raise SaferError(f"mask opacity must be in (0,1], got {self.opacity}")
        if self.margin < 0:
            raise SaferError(f"mask margin must be >= 0, got {self.margin}")


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices in CCW order."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=np.float64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.float64)


def _coverage(hull: np.ndarray, h: int, w: int, pad: float) -> np.ndarray:
    """Boolean grid of pixels within `pad` of the hull (inside counts)."""
    ys, xs = np.mgrid[0:h, 0:w]
    px = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    n = hull.shape[0]
    if n == 1:
        dist = np.linalg.norm(px - hull[0], axis=1)
        return (dist <= pad).reshape(h, w)

    inside = np.ones(px.shape[0], dtype=bool)
    min_dist = np.full(px.shape[0], np.inf)
    for i in range(n):
        a = hull[i]
        b = hull[(i + 1) % n]
        edge = b - a
        rel = px - a
        if n > 2:
            inside &= (edge[0] * rel[:, 1] - edge[1] * rel[:, 0]) >= 0
        seg_len2 = float(edge @ edge)
        if seg_len2 == 0:
            dist = np.linalg.norm(rel, axis=1)
        else:
            t = np.clip(rel @ edge / seg_len2, 0.0, 1.0)
            dist = np.linalg.norm(rel - t[:, None] * edge, axis=1)
        np.minimum(min_dist, dist, out=min_dist)
    if n == 2:
        inside = np.zeros(px.shape[0], dtype=bool)
    covered = inside | (min_dist <= pad)
    return covered.reshape(h, w)


def mask_polygon(mesh: FaceMesh, box: FaceBox | None,
                 image_shape: tuple[int, int]) -> tuple[np.ndarray, float]:
    """Hull vertices in pixel space plus the pixel-space inter-ocular distance."""
    missing = [k for k in MASK_KEYPOINTS if k not in mesh.semantic_index]
    if missing:
        raise GeometryError(f"mesh is missing mask keypoints: {missing}")
    h, w = image_shape
    if box is None:
        box = FaceBox(0.0, 0.0, float(w), float(h))

    def to_px(p: np.ndarray) -> np.ndarray:
        return np.array([box.x + p[0] * (box.w - 1), box.y + p[1] * (box.h - 1)])

    pts = np.stack([to_px(mesh.keypoint(k)) for k in MASK_KEYPOINTS])
    eye_l = to_px(mesh.eye_center("left"))
    eye_r = to_px(mesh.eye_center("right"))
    iod_px = float(np.linalg.norm(eye_l - eye_r))
    if iod_px == 0.0:
        raise GeometryError("eye centers coincide in pixel space")
    return convex_hull(pts), iod_px


def overlay_mask(image: np.ndarray, mesh: FaceMesh, style: MaskStyle,
                 box: FaceBox | None = None) -> np.ndarray:
    """Paint the padded lower-face hull with the mask color.

    The mesh must be aligned to the face crop; ``box`` locates that crop in
    the image (whole image when omitted). Pixels outside the covered region
    are returned bit-identical.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    hull, iod_px = mask_polygon(mesh, box, (h, w))
    covered = _coverage(hull, h, w, pad=style.margin * iod_px)
    out = image.copy()
    color = np.asarray(style.color, dtype=np.float64)
    out[covered] = style.opacity * color + (1.0 - style.opacity) * out[covered]
    return out


def build_masked_manifest(
    manifest: DatasetManifest,
    style: MaskStyle,
    output_dir: str | Path,
) -> DatasetManifest:
    """Write a masked variant of every record that has a landmark sidecar.

    Masked images land in ``<output_dir>/images``; records keep their label
    and split, get the ``masked`` flag and an ``_m`` id suffix. Records
    without landmarks are skipped with a warning. The new manifest is also
    saved as ``manifest.jsonl`` in the output directory.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    detector = FixtureDetector()
    new_records: list[SampleRecord] = []
    skipped = 0
    for rec in manifest.records:
        if not rec.landmark_path:
            logger.warning("record %s has no landmark sidecar; skipped", rec.id)
            skipped += 1
            continue
        image = load_image(manifest.resolve(rec.image_path))
        faces = detect_face(image, detector,
                            sidecar_path=manifest.resolve(rec.landmark_path))
        if not faces:
            logger.warning("record %s sidecar lists no faces; skipped", rec.id)
            skipped += 1
            continue
        masked = image
        for face in faces:
            masked = overlay_mask(masked, face.mesh, style, box=face.box)
        image_rel = f"images/{rec.id}_m.png"
        save_image(output_dir / image_rel, masked)

        def rel(p: str | None) -> str | None:
            if p is None:
                return None
            return os.path.relpath(manifest.resolve(p), output_dir.resolve())

        new_records.append(
            dc_replace(
                rec,
                id=f"{rec.id}_m",
                image_path=image_rel,
                landmark_path=rel(rec.landmark_path),
                person_mask_path=rel(rec.person_mask_path),
                masked=True,
            )
        )
    if skipped:
        logger.warning("masked build skipped %d of %d records",
                       skipped, len(manifest.records))
    masked_manifest = DatasetManifest(
        name=f"{manifest.name}_masked",
        records=tuple(new_records),
        root=output_dir,
    )
    save_manifest(masked_manifest, output_dir / "manifest.jsonl")
    return masked_manifest
