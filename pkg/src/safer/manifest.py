"""Dataset manifests: JSON-Lines files describing every sample of a dataset.

The first line of a manifest file is a header ``{"schema": 1, "name": ...}``;
every following line is one sample record. All paths inside a manifest are
relative to the directory containing the manifest file, which keeps datasets
relocatable. Manifests are immutable values after load; curation steps write
new files instead of mutating existing ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ManifestError
from .labels import EmotionLabel

SCHEMA_VERSION = 1

SPLITS = ("train", "val", "test", "unassigned")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    label: EmotionLabel | None = None
    split: str = "unassigned"
    landmark_path: str | None = None
    person_mask_path: str | None = None
    demographic_tags: dict[str, str] | None = None
    masked: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if not self.image_path:
            raise ManifestError(f"record {self.id!r}: image_path must be non-empty")
        if self.split not in SPLITS:
            raise ManifestError(
                f"record {self.id!r}: split must be one of {SPLITS}, got {self.split!r}"
            )

    def to_json_dict(self) -> dict:
        d: dict = {"id": self.id, "image_path": self.image_path}
        if self.label is not None:
            d["label"] = self.label.display_name
        if self.split != "unassigned":
            d["split"] = self.split
        if self.landmark_path is not None:
            d["landmark_path"] = self.landmark_path
        if self.person_mask_path is not None:
            d["person_mask_path"] = self.person_mask_path
        if self.demographic_tags:
            d["demographic_tags"] = dict(self.demographic_tags)
        if self.masked:
            d["masked"] = True
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SampleRecord":
        label = d.get("label")
        return cls(
            id=d.get("id", ""),
            image_path=d.get("image_path", ""),
            label=EmotionLabel.from_name(label) if label is not None else None,
            split=d.get("split", "unassigned"),
            landmark_path=d.get("landmark_path"),
            person_mask_path=d.get("person_mask_path"),
            demographic_tags=d.get("demographic_tags"),
            masked=bool(d.get("masked", False)),
        )


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[SampleRecord, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    @property
    def class_counts(self) -> dict[EmotionLabel, int]:
        counts = {label: 0 for label in EmotionLabel}
        for rec in self.records:
            if rec.label is not None:
                counts[rec.label] += 1
        return counts

    def labeled_records(self) -> list[SampleRecord]:
        return [r for r in self.records if r.label is not None]

    def split_records(self, split: str) -> list[SampleRecord]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def by_id(self, record_id: str) -> SampleRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise ManifestError(f"no record with id {record_id!r}")

    def resolve(self, rel_path: str) -> Path:
        """Resolve a manifest-relative path against the manifest directory."""
        return (self.root / rel_path).resolve()

    def with_records(self, records: list[SampleRecord], name: str | None = None) -> "DatasetManifest":
        return DatasetManifest(
            name=name if name is not None else self.name,
            records=tuple(records),
            root=self.root,
        )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a JSON-Lines manifest, validating the header and every record."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    records: list[SampleRecord] = []
    name = path.stem
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if lineno == 1:
                if "schema" not in data:
                    raise ManifestError(
                        f"{path}:1: missing header line "
                        '(expected {"schema": 1, "name": ...})'
                    )
                if data["schema"] != SCHEMA_VERSION:
                    raise ManifestError(
                        f"{path}:1: unsupported schema version {data['schema']!r}"
                    )
                name = data.get("name", name)
                continue
            try:
                records.append(SampleRecord.from_json_dict(data))
            except (ManifestError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    try:
        return DatasetManifest(name=name, records=tuple(records), root=path.parent)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from exc


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write a manifest as JSON-Lines: header line first, one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps({"schema": SCHEMA_VERSION, "name": manifest.name}) + "\n")
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")
    return path


@dataclass(frozen=True)
class BalanceReport:
    counts: dict[EmotionLabel, int]
    imbalance_ratio: float

    def rows(self) -> list[tuple[str, int]]:
        return [(label.display_name, self.counts[label]) for label in EmotionLabel]


def balance_report(manifest: DatasetManifest) -> BalanceReport:
    """Per-class counts plus the imbalance ratio max / min-nonzero.

    Every label appears in the report even at count zero; the ratio is 1.0
    when all nonzero classes are equally represented.
    """
    counts = manifest.class_counts
    nonzero = [c for c in counts.values() if c > 0]
    if not nonzero:
        raise ManifestError(
            f"manifest {manifest.name!r} has no labeled records to report on"
        )
    ratio = max(nonzero) / min(nonzero)
    return BalanceReport(counts=counts, imbalance_ratio=ratio)


def relocate_record(rec: SampleRecord, old_root: Path, new_root: Path) -> SampleRecord:
    """Rewrite a record's relative paths so they stay valid from new_root."""

    def rel(p: str | None) -> str | None:
        if p is None:
            return None
        import os

        return os.path.relpath((old_root / p).resolve(), new_root.resolve())

    return replace(
        rec,
        image_path=rel(rec.image_path),
        landmark_path=rel(rec.landmark_path),
        person_mask_path=rel(rec.person_mask_path),
    )
