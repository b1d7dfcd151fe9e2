"""Face mesh geometry: action-unit centers, pairwise AU distances, and the
visible width/height/distance/angle feature set.

All geometric features are normalized by the inter-ocular distance, which
makes them invariant to translation, rotation and uniform scaling of the
mesh. Mesh coordinates are normalized to the face crop ([0, 1] with y
growing downward), but no operation here depends on that particular frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

#: Minimum landmark count for a usable mesh (standard dense-landmark floor).
MIN_LANDMARKS = 68

#: Semantic keypoint names every full mesh is expected to carry.
REQUIRED_KEYPOINTS = (
    "brow_inner_left",
    "brow_inner_right",
    "brow_outer_left",
    "brow_outer_right",
    "brow_center_left",
    "brow_center_right",
    "eye_inner_left",
    "eye_outer_left",
    "eye_inner_right",
    "eye_outer_right",
    "eyelid_upper_left",
    "eyelid_lower_left",
    "eyelid_upper_right",
    "eyelid_lower_right",
    "cheek_center_left",
    "cheek_center_right",
    "nose_tip",
    "lip_upper_center",
    "lip_lower_center",
    "lip_corner_left",
    "lip_corner_right",
    "below_lip_corner_left",
    "below_lip_corner_right",
    "chin_center",
)

#: The 12 action units whose centers anchor the pairwise-distance feature set.
AU_IDS = (1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24)

#: Canonical pair ordering: sorted by (AU_i, AU_j) with i < j.
AU_PAIRS = tuple(
    (AU_IDS[i], AU_IDS[j]) for i in range(len(AU_IDS)) for j in range(i + 1, len(AU_IDS))
)

AU_FEATURE_LEN = len(AU_PAIRS)  # C(12, 2) = 66
VISIBLE_FEATURE_LEN = 14

#: How far "above" a brow keypoint an AU-center rule looks, as a fraction of
#: the inter-ocular distance, measured along the face's own up direction
#: (chin toward eyes) so the rule is similarity-covariant.
ABOVE_BROW_OFFSET = 0.15

# AU id -> (anchor keypoint, offset along face-up in inter-ocular units).
# Bilateral anchors use the left side; AU 12/15 share the lip corner and
# AU 23/24 share the bottom lip center, as their selection rules coincide.
AU_RULES: dict[int, tuple[str, float]] = {
    1: ("brow_inner_left", ABOVE_BROW_OFFSET),
    2: ("brow_outer_left", ABOVE_BROW_OFFSET),
    4: ("brow_center_left", 0.0),
    6: ("cheek_center_left", 0.0),
    7: ("eyelid_upper_left", 0.0),
    10: ("lip_upper_center", 0.0),
    12: ("lip_corner_left", 0.0),
    14: ("below_lip_corner_left", 0.0),
    15: ("lip_corner_left", 0.0),
    17: ("chin_center", 0.0),
    23: ("lip_lower_center", 0.0),
    24: ("lip_lower_center", 0.0),
}


@dataclass(frozen=True)
class FaceBox:
    """Face bounding box in source-image pixel coordinates."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"face box must have positive size, got {self}")

    def clamped(self, image_w: int, image_h: int) -> "FaceBox":
        x0 = min(max(self.x, 0.0), image_w - 1.0)
        y0 = min(max(self.y, 0.0), image_h - 1.0)
        x1 = min(self.x + self.w, float(image_w))
        y1 = min(self.y + self.h, float(image_h))
        if x1 <= x0 or y1 <= y0:
            raise GeometryError(f"face box {self} lies outside a {image_w}x{image_h} image")
        return FaceBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class FaceMesh:
    """Dense landmark set with a semantic name -> index map.

    ``points`` is an (N, 2) or (N, 3) float array; only x/y are used by the
    geometric features, a z column is carried through untouched.
    """

    points: np.ndarray
    semantic_index: dict[str, int]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise GeometryError(f"mesh points must be (N, 2) or (N, 3), got {pts.shape}")
        if pts.shape[0] < MIN_LANDMARKS:
            raise GeometryError(
                f"mesh has {pts.shape[0]} landmarks; at least {MIN_LANDMARKS} required"
            )
        if not np.isfinite(pts).all():
            raise GeometryError("mesh contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        n = pts.shape[0]
        for name, idx in self.semantic_index.items():
            if not (isinstance(idx, (int, np.integer)) and 0 <= idx < n):
                raise GeometryError(
                    f"semantic keypoint {name!r} maps to invalid index {idx!r} (mesh size {n})"
                )
        if all(k in self.semantic_index for k in
               ("eye_inner_left", "eye_outer_left", "eye_inner_right", "eye_outer_right")):
            if np.allclose(self.eye_center("left"), self.eye_center("right")):
                raise GeometryError("left and right eye centers coincide")

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def keypoint(self, name: str) -> np.ndarray:
        if name not in self.semantic_index:
            raise GeometryError(f"mesh is missing semantic keypoint {name!r}")
        return self.xy[self.semantic_index[name]]

    def eye_center(self, side: str) -> np.ndarray:
        """Eye center, defined as the midpoint of the inner and outer corners."""
        return 0.5 * (self.keypoint(f"eye_inner_{side}") + self.keypoint(f"eye_outer_{side}"))

    def transformed(self, scale: float = 1.0, angle: float = 0.0,
                    translation: tuple[float, float] = (0.0, 0.0)) -> "FaceMesh":
        """Apply a similarity transform to all landmarks (testing helper)."""
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        xy = scale * (self.xy @ rot.T) + np.asarray(translation, dtype=np.float64)
        if self.points.shape[1] == 3:
            pts = np.column_stack([xy, self.points[:, 2] * scale])
        else:
            pts = xy
        return FaceMesh(points=pts, semantic_index=dict(self.semantic_index))


@dataclass(frozen=True)
class AUCenters:
    """One 2-D point per action unit, each snapped to the nearest landmark."""

    points: dict[int, np.ndarray]
    indices: dict[int, int]

    def __post_init__(self) -> None:
        if tuple(sorted(self.points)) != tuple(sorted(AU_IDS)):
            raise GeometryError(
                f"AU centers must cover exactly {AU_IDS}, got {sorted(self.points)}"
            )

    def as_array(self) -> np.ndarray:
        """(12, 2) array in AU_IDS order."""
        return np.stack([self.points[au] for au in AU_IDS])


@dataclass(frozen=True)
class VisibleFeatures:
    """The 14-value width/height/distance/angle feature vector.

    Order: widths (left eye, right eye, mouth), heights (left eye, right eye,
    mouth), distances (eye-eye, eyes-brows, eyes-mouth, eyes-nose,
    nose-mouth), angles at (left eye, right eye, mouth) in radians. Lengths
    are normalized by the inter-ocular distance.
    """

    values: np.ndarray
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (VISIBLE_FEATURE_LEN,):
            raise GeometryError(
                f"visible feature vector must have length {VISIBLE_FEATURE_LEN}, "
                f"got shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)


VISIBLE_FEATURE_NAMES = (
    "left_eye_width",
    "right_eye_width",
    "mouth_width",
    "left_eye_height",
    "right_eye_height",
    "mouth_height",
    "eye_to_eye_distance",
    "eyes_to_brows_distance",
    "eyes_to_mouth_distance",
    "eyes_to_nose_distance",
    "nose_to_mouth_distance",
    "angle_at_left_eye",
    "angle_at_right_eye",
    "angle_at_mouth",
)


def interocular_distance(mesh: FaceMesh) -> float:
    """Distance between the two eye centers; the scale baseline everywhere."""
    left = mesh.eye_center("left")
    right = mesh.eye_center("right")
    dist = float(np.linalg.norm(left - right))
    if dist == 0.0:
        raise GeometryError("eye centers coincide; inter-ocular distance undefined")
    return dist


def _face_up_direction(mesh: FaceMesh) -> np.ndarray:
    """Unit vector from the chin toward the midpoint of the eyes."""
    eyes_mid = 0.5 * (mesh.eye_center("left") + mesh.eye_center("right"))
    chin = mesh.keypoint("chin_center")
    vec = eyes_mid - chin
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise GeometryError("chin center coincides with the eye midpoint")
    return vec / norm


def select_au_centers(mesh: FaceMesh) -> AUCenters:
    """Resolve each AU rule to the nearest mesh landmark.

    Each rule names an anchor keypoint (plus an optional offset along the
    face's up direction for the "above brow" rules); the AU center is the
    landmark closest to that target location.
    """
    iod = interocular_distance(mesh)
    up = _face_up_direction(mesh)
    xy = mesh.xy
    points: dict[int, np.ndarray] = {}
    indices: dict[int, int] = {}
    for au_id, (anchor, offset) in AU_RULES.items():
        if anchor not in mesh.semantic_index:
            raise GeometryError(
                f"AU {au_id}: mesh is missing semantic keypoint {anchor!r}"
            )
        target = mesh.keypoint(anchor) + offset * iod * up
        idx = int(np.argmin(((xy - target) ** 2).sum(axis=1)))
        indices[au_id] = idx
        points[au_id] = xy[idx].copy()
    return AUCenters(points=points, indices=indices)


def au_features(centers: AUCenters, interocular: float) -> np.ndarray:
    """All pairwise AU-center distances divided by the inter-ocular distance.

    Entries follow the canonical AU_PAIRS order; length is always 66.
    """
    if interocular <= 0:
        raise GeometryError(f"inter-ocular distance must be > 0, got {interocular}")
    pts = centers.points
    out = np.empty(AU_FEATURE_LEN, dtype=np.float64)
    for k, (a, b) in enumerate(AU_PAIRS):
        out[k] = np.linalg.norm(pts[a] - pts[b]) / interocular
    return out


def _angle_at(vertex: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """Interior angle at `vertex` of the triangle (vertex, p, q)."""
    u = p - vertex
    v = q - vertex
    cross = abs(u[0] * v[1] - u[1] * v[0])
    dot = float(u @ v)
    return float(np.arctan2(cross, dot))


def visible_features(mesh: FaceMesh) -> VisibleFeatures:
    """Compute the 14 visible geometric features of the face.

    Eye-to-X distances are measured from the midpoint of the two eye
    centers; the mouth center is the midpoint of the upper and lower lip
    centers. A collinear (eye, eye, mouth) triangle yields the degenerate
    angle convention (0, 0, pi) with the result flagged.
    """
    iod = interocular_distance(mesh)

    eye_l = mesh.eye_center("left")
    eye_r = mesh.eye_center("right")
    eyes_mid = 0.5 * (eye_l + eye_r)
    mouth_center = 0.5 * (mesh.keypoint("lip_upper_center") + mesh.keypoint("lip_lower_center"))
    brows_mid = 0.5 * (mesh.keypoint("brow_center_left") + mesh.keypoint("brow_center_right"))
    nose = mesh.keypoint("nose_tip")

    def dist(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(a - b)) / iod

    widths = [
        dist(mesh.keypoint("eye_inner_left"), mesh.keypoint("eye_outer_left")),
        dist(mesh.keypoint("eye_inner_right"), mesh.keypoint("eye_outer_right")),
        dist(mesh.keypoint("lip_corner_left"), mesh.keypoint("lip_corner_right")),
    ]
    heights = [
        dist(mesh.keypoint("eyelid_upper_left"), mesh.keypoint("eyelid_lower_left")),
        dist(mesh.keypoint("eyelid_upper_right"), mesh.keypoint("eyelid_lower_right")),
        dist(mesh.keypoint("lip_upper_center"), mesh.keypoint("lip_lower_center")),
    ]
    distances = [
        dist(eye_l, eye_r),
        dist(eyes_mid, brows_mid),
        dist(eyes_mid, mouth_center),
        dist(eyes_mid, nose),
        dist(nose, mouth_center),
    ]

    # Collinearity test on the (eye, eye, mouth) triangle, scale-free.
    u = eye_r - eye_l
    v = mouth_center - eye_l
    cross = abs(u[0] * v[1] - u[1] * v[0])
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    degenerate = denom == 0.0 or cross / denom < 1e-12
    if degenerate:
        angles = [0.0, 0.0, float(np.pi)]
    else:
        angles = [
            _angle_at(eye_l, eye_r, mouth_center),
            _angle_at(eye_r, eye_l, mouth_center),
            _angle_at(mouth_center, eye_l, eye_r),
        ]

    values = np.array(widths + heights + distances + angles, dtype=np.float64)
    return VisibleFeatures(values=values, degenerate=bool(degenerate))
