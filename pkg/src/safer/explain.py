"""Human-readable explanations: geometric face evidence + place description.

Generation is template-based and fully deterministic: each of the 14 visible
features whose relative deviation from a neutral baseline exceeds a
threshold contributes one clause from a fixed table, and the final sentence
combines the predicted emotion, the clauses, and the scene category and
attributes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import json

import numpy as np

from .context import PlaceInfo
from .errors import SaferError
from .geometry import VISIBLE_FEATURE_LEN, VISIBLE_FEATURE_NAMES
from .labels import EmotionLabel
from .manifest import DatasetManifest
from .pipeline import FeaturePipeline

#: Clause table keyed by feature index; (above-baseline, below-baseline) text.
CLAUSES: tuple[tuple[str, str], ...] = (
    ("left eye wider than the neutral baseline", "left eye narrower than the neutral baseline"),
    ("right eye wider than the neutral baseline", "right eye narrower than the neutral baseline"),
    ("mouth width above neutral baseline", "mouth width below neutral baseline"),
    ("left eye opened wider than neutral", "left eye more closed than neutral"),
    ("right eye opened wider than neutral", "right eye more closed than neutral"),
    ("mouth open wider than neutral", "mouth more closed than neutral"),
    ("eye spacing above neutral baseline", "eye spacing below neutral baseline"),
    ("brows raised further from the eyes than neutral", "brows lowered toward the eyes"),
    ("mouth further from the eyes than neutral", "mouth drawn up toward the eyes"),
    ("nose-to-eye distance above neutral baseline", "nose-to-eye distance below neutral baseline"),
    ("nose-to-mouth distance above neutral baseline", "nose-to-mouth distance below neutral baseline"),
    ("eye-line angle at the left eye above neutral", "eye-line angle at the left eye below neutral"),
    ("eye-line angle at the right eye above neutral", "eye-line angle at the right eye below neutral"),
    ("mouth-vertex angle above neutral", "mouth-vertex angle below neutral"),
)

assert len(CLAUSES) == VISIBLE_FEATURE_LEN == len(VISIBLE_FEATURE_NAMES)

DEFAULT_THRESHOLD = 0.15
NO_EVIDENCE_CLAUSE = "no strong facial deviation"


@dataclass(frozen=True)
class Explanation:
    emotion: EmotionLabel
    face_evidence: tuple[str, ...]
    place_category: str
    place_attributes: tuple[str, ...]
    rendered: str

    def __post_init__(self) -> None:
        if not self.rendered:
            raise SaferError("rendered explanation must be non-empty")
        if self.emotion.display_name not in self.rendered:
            raise SaferError("rendered explanation must contain the emotion word")
        if self.place_category not in self.rendered:
            raise SaferError("rendered explanation must contain the place category")
        if self.face_evidence and not any(c in self.rendered for c in self.face_evidence):
            raise SaferError("rendered explanation must contain the face evidence")

    def to_json_dict(self) -> dict:
        return {
            "emotion": self.emotion.display_name,
            "evidence": list(self.face_evidence),
            "place": {
                "category": self.place_category,
                "attributes": list(self.place_attributes),
            },
            "rendered": self.rendered,
        }


def neutral_baseline(
    manifest: DatasetManifest,
    pipeline: FeaturePipeline,
    split: str = "train",
) -> np.ndarray:
    """Mean visible-feature vector over Neutral-labeled records of a split."""
    records = [r for r in manifest.split_records(split)
               if r.label == EmotionLabel.NEUTRAL]
    if not records:
        raise SaferError(
            f"no Neutral-labeled records in split {split!r}; the evidence "
            "baseline must be computed from Neutral training samples"
        )
    vectors = [pipeline.bundle(r).visible for r in records]
    return np.mean(vectors, axis=0)


def save_baseline(path: str | Path, baseline: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"visible_baseline": list(map(float, baseline))}))
    return path


def load_baseline(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise SaferError(f"baseline file not found: {path}")
    data = json.loads(path.read_text())
    baseline = np.asarray(data["visible_baseline"], dtype=np.float64)
    if baseline.shape != (VISIBLE_FEATURE_LEN,):
        raise SaferError(f"baseline must have length {VISIBLE_FEATURE_LEN}")
    return baseline


def face_evidence(
    visible: np.ndarray,
    baseline: np.ndarray | None,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[str]:
    """One clause per feature whose relative deviation exceeds the threshold."""
    if baseline is None:
        raise SaferError(
            "no neutral baseline available; compute it from Neutral-labeled "
            "training samples (neutral_baseline) before requesting evidence"
        )
    visible = np.asarray(visible, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if visible.shape != (VISIBLE_FEATURE_LEN,) or baseline.shape != (VISIBLE_FEATURE_LEN,):
        raise SaferError(
            f"visible and baseline vectors must have length {VISIBLE_FEATURE_LEN}"
        )
    clauses = []
    for i in range(VISIBLE_FEATURE_LEN):
        denom = max(abs(baseline[i]), 1e-9)
        rel = (visible[i] - baseline[i]) / denom
        if rel > threshold:
            clauses.append(CLAUSES[i][0])
        elif rel < -threshold:
            clauses.append(CLAUSES[i][1])
    return clauses


def render(emotion: EmotionLabel, evidence: list[str], place_info: PlaceInfo) -> Explanation:
    """Deterministic sentence template combining all explanation inputs."""
    evidence_text = ", ".join(evidence) if evidence else NO_EVIDENCE_CLAUSE
    scene = place_info.category
    if place_info.attributes:
        scene += f" ({', '.join(place_info.attributes)})"
    rendered = (
        f"The subject appears {emotion.display_name}: {evidence_text}; "
        f"the scene suggests {scene}."
    )
    return Explanation(
        emotion=emotion,
        face_evidence=tuple(evidence),
        place_category=place_info.category,
        place_attributes=tuple(place_info.attributes),
        rendered=rendered,
    )
