"""Dataset curation: annotation consensus, frame extraction, bias audits,
and the append-only annotation store backing the labeling service.

The keep/reject rule: an image is kept when at least ``min_agreement``
annotators (4 of 8 by default) agree on one emotion label; a quorum of
"Irrelevant" verdicts rejects the image outright; everything else is
rejected for lack of consensus. Both thresholds are configurable.
"""

from __future__ import annotations

import json
import os
import threading
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np

from .errors import CurationError
from .labels import IRRELEVANT, EmotionLabel
from .manifest import DatasetManifest

VALID_VERDICTS = tuple(label.display_name for label in EmotionLabel) + (IRRELEVANT,)

KEEP = "keep"
REJECT_NO_CONSENSUS = "reject_no_consensus"
REJECT_IRRELEVANT = "reject_irrelevant"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    annotator_id: str
    verdict: str
    timestamp: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in VALID_VERDICTS:
            raise CurationError(
                f"invalid verdict {self.verdict!r}; expected one of {VALID_VERDICTS}"
            )
        if not self.image_id or not self.annotator_id:
            raise CurationError("image_id and annotator_id must be non-empty")
        if not self.timestamp:
            object.__setattr__(self, "timestamp", _utc_now())

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "annotator_id": self.annotator_id,
            "verdict": self.verdict,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            image_id=d["image_id"],
            annotator_id=d["annotator_id"],
            verdict=d["verdict"],
            timestamp=d.get("timestamp", ""),
        )


@dataclass(frozen=True)
class ConsensusResult:
    image_id: str
    decision: str
    label: EmotionLabel | None
    vote_histogram: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "decision": self.decision,
            "label": self.label.display_name if self.label else None,
            "vote_histogram": dict(self.vote_histogram),
        }

    @property
    def final(self) -> bool:
        """Kept or rejected-irrelevant images need no further annotation."""
        return self.decision in (KEEP, REJECT_IRRELEVANT)


def latest_verdicts(records: list[AnnotationRecord]) -> dict[str, str]:
    """One verdict per annotator: later submissions replace earlier ones."""
    ordered = sorted(enumerate(records), key=lambda kv: (kv[1].timestamp, kv[0]))
    out: dict[str, str] = {}
    for _, rec in ordered:
        out[rec.annotator_id] = rec.verdict
    return out


def consensus(
    records: list[AnnotationRecord],
    min_agreement: int = 4,
    irrelevant_quorum: int = 4,
) -> ConsensusResult:
    """Apply the agreement rule to one image's annotation records."""
    if min_agreement < 1:
        raise CurationError(f"min_agreement must be >= 1, got {min_agreement}")
    if irrelevant_quorum < 1:
        raise CurationError(f"irrelevant_quorum must be >= 1, got {irrelevant_quorum}")
    if not records:
        raise CurationError("consensus requires at least one annotation record")
    image_ids = {r.image_id for r in records}
    if len(image_ids) != 1:
        raise CurationError(f"records span multiple images: {sorted(image_ids)}")
    image_id = records[0].image_id

    verdicts = latest_verdicts(records)
    histogram = Counter(verdicts.values())

    if histogram.get(IRRELEVANT, 0) >= irrelevant_quorum:
        return ConsensusResult(image_id, REJECT_IRRELEVANT, None, dict(histogram))

    emotion_counts = {v: c for v, c in histogram.items() if v != IRRELEVANT}
    if emotion_counts:
        top = max(emotion_counts.values())
        if top >= min_agreement:
            winners = [v for v, c in emotion_counts.items() if c == top]
            if len(winners) == 1:
                return ConsensusResult(
                    image_id, KEEP, EmotionLabel.from_name(winners[0]), dict(histogram)
                )
            # ties cannot happen when min_agreement > n/2; configured lower,
            # a tie is no consensus
            return ConsensusResult(image_id, REJECT_NO_CONSENSUS, None, dict(histogram))
    return ConsensusResult(image_id, REJECT_NO_CONSENSUS, None, dict(histogram))


class AnnotationStore:
    """Append-only JSON-Lines event log with write-through durability.

    Every acknowledged submission is flushed and fsynced before the call
    returns, so a service restart replays the identical record set.
    Concurrent submitters are serialized by an internal lock.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: list[AnnotationRecord] = []
        if self.path.exists():
            with self.path.open() as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        self._records.append(
                            AnnotationRecord.from_json_dict(json.loads(line))
                        )
                    except (json.JSONDecodeError, KeyError, CurationError) as exc:
                        raise CurationError(
                            f"{self.path}:{lineno}: corrupt annotation event: {exc}"
                        ) from exc
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def append(self, record: AnnotationRecord) -> None:
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record.to_json_dict()) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._records.append(record)

    def records(self) -> list[AnnotationRecord]:
        with self._lock:
            return list(self._records)

    def by_image(self) -> dict[str, list[AnnotationRecord]]:
        grouped: dict[str, list[AnnotationRecord]] = {}
        for rec in self.records():
            grouped.setdefault(rec.image_id, []).append(rec)
        return grouped

    def annotated_by(self, annotator_id: str) -> set[str]:
        return {r.image_id for r in self.records() if r.annotator_id == annotator_id}


def consensus_all(
    store: AnnotationStore,
    min_agreement: int = 4,
    irrelevant_quorum: int = 4,
) -> list[ConsensusResult]:
    """Consensus for every image present in the store, ordered by image id."""
    grouped = store.by_image()
    return [
        consensus(grouped[image_id], min_agreement, irrelevant_quorum)
        for image_id in sorted(grouped)
    ]


# ----------------------------------------------------------- frame extraction

@dataclass(frozen=True)
class FrameRecord:
    source: str
    frame_index: int
    timestamp: float
    image: np.ndarray


def sample_frames_by_time(frames, fps: float) -> list[tuple[int, float, np.ndarray]]:
    """Pick, for each target time k/fps, the first frame at or past it.

    ``frames`` yields (index, timestamp, image) with monotone timestamps;
    works for variable-frame-rate sources too.
    """
    if fps <= 0:
        raise CurationError(f"sampling rate must be > 0, got {fps}")
    interval = 1.0 / fps
    eps = 1e-9
    picked: list[tuple[int, float, np.ndarray]] = []
    target = 0.0
    for idx, ts, img in frames:
        while ts >= target - eps:
            picked.append((idx, ts, img))
            target += interval
    return picked


def extract_frames(
    video_path: str | Path,
    fps: float = 10.0,
) -> list[FrameRecord]:
    """Decode a video and sample frames at the given rate from t = 0."""
    video_path = Path(video_path)
    if not video_path.exists():
        raise CurationError(f"video file not found: {video_path}")
    cap = cv2.VideoCapture(str(video_path))
    if not cap.isOpened():
        raise CurationError(
            f"could not open video {video_path} (unsupported container or codec)"
        )
    src_fps = cap.get(cv2.CAP_PROP_FPS)

    def frame_iter():
        index = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if src_fps and src_fps > 0:
                ts = index / src_fps
            else:
                ts = cap.get(cv2.CAP_PROP_POS_MSEC) / 1000.0
            rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0
            yield index, ts, rgb
            index += 1

    try:
        picked = sample_frames_by_time(frame_iter(), fps)
    finally:
        cap.release()
    if not picked:
        raise CurationError(f"video {video_path} contains no decodable frames")
    return [
        FrameRecord(source=str(video_path), frame_index=idx, timestamp=ts, image=img)
        for idx, ts, img in picked
    ]


# ------------------------------------------------------------------ bias audit

@dataclass(frozen=True)
class BiasAuditReport:
    """Counts per (class, tag key, tag value) plus untagged tallies."""

    counts: dict[str, dict[EmotionLabel, Counter]]
    untagged: dict[str, dict[EmotionLabel, int]]
    class_totals: dict[EmotionLabel, int]

    def percentage(self, tag_key: str, label: EmotionLabel, value: str) -> float:
        tagged_total = sum(self.counts[tag_key][label].values())
        if tagged_total == 0:
            return 0.0
        return 100.0 * self.counts[tag_key][label][value] / tagged_total

    def to_json_dict(self) -> dict:
        return {
            "class_totals": {l.display_name: n for l, n in self.class_totals.items()},
            "tags": {
                key: {
                    label.display_name: {
                        "counts": dict(self.counts[key][label]),
                        "untagged": self.untagged[key][label],
                        "percentages": {
                            value: self.percentage(key, label, value)
                            for value in self.counts[key][label]
                        },
                    }
                    for label in EmotionLabel
                }
                for key in self.counts
            },
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["tag_key,class,value,count,percent"]
        for key in sorted(self.counts):
            for label in EmotionLabel:
                for value, count in sorted(self.counts[key][label].items()):
                    lines.append(
                        f"{key},{label.display_name},{value},{count},"
                        f"{self.percentage(key, label, value):.2f}"
                    )
                if self.untagged[key][label]:
                    lines.append(
                        f"{key},{label.display_name},<untagged>,"
                        f"{self.untagged[key][label]},"
                    )
        path.write_text("\n".join(lines) + "\n")
        return path


def bias_audit(manifest: DatasetManifest) -> BiasAuditReport:
    """Demographic representation audit over every tag key in the manifest."""
    labeled = manifest.labeled_records()
    tag_keys = sorted({k for r in labeled if r.demographic_tags
                       for k in r.demographic_tags})
    if not tag_keys:
        raise CurationError("no labeled records carry demographic tags")
    counts: dict[str, dict[EmotionLabel, Counter]] = {
        key: {label: Counter() for label in EmotionLabel} for key in tag_keys
    }
    untagged: dict[str, dict[EmotionLabel, int]] = {
        key: {label: 0 for label in EmotionLabel} for key in tag_keys
    }
    class_totals = manifest.class_counts
    for rec in labeled:
        for key in tag_keys:
            value = (rec.demographic_tags or {}).get(key)
            if value is None:
                untagged[key][rec.label] += 1
            else:
                counts[key][rec.label][value] += 1
    return BiasAuditReport(counts=counts, untagged=untagged, class_totals=class_totals)
