"""Experimental machinery: stratified splits, augmentation, the training
loop with reduce-on-plateau learning rate, evaluation with confusion
matrices, and the stream-ablation harness.

Training recipe: minibatch gradient descent on cross-entropy, batch size 32,
learning rate starting at 1e-5 and halved whenever validation accuracy
plateaus (floored at 1e-7). The best-validation checkpoint is returned.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import smallcnn
from .backbones import SmallCNNBackbone
from .config import AugmentParams, PipelineConfig
from .errors import ConfigError, TrainingError
from .fusion import (
    ClassifierParams,
    StreamMask,
    assemble,
    forward_batch,
    gradient_batch,
    init_classifier,
)
from .labels import NUM_CLASSES, EmotionLabel
from .manifest import DatasetManifest, SampleRecord
from .pipeline import FeaturePipeline, ImageFeaturePipeline, extract_bundles

logger = logging.getLogger(__name__)


# -------------------------------------------------------------------- splits

def split_dataset(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetManifest:
    """Assign train/val/test splits stratified per class.

    Per-class counts follow the largest-remainder rule so they always sum to
    the class size and stay within 1 of round(n * ratio). Classes with fewer
    than 3 samples go entirely to train (with a warning). Unlabeled records
    keep their ``unassigned`` split.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios!r}")
    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for label in EmotionLabel:
        ids = [r.id for r in manifest.records if r.label == label]
        if not ids:
            continue
        if len(ids) < 3:
            logger.warning(
                "class %s has only %d samples; assigning all to train",
                label.display_name, len(ids),
            )
            for rid in ids:
                assignment[rid] = "train"
            continue
        order = rng.permutation(len(ids))
        counts = _largest_remainder(len(ids), ratios)
        splits = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
        for pos, split in zip(order, splits):
            assignment[ids[pos]] = split
    new_records = [
        replace(rec, split=assignment[rec.id]) if rec.id in assignment else rec
        for rec in manifest.records
    ]
    return manifest.with_records(new_records)


def _largest_remainder(n: int, ratios: tuple[float, float, float]) -> list[int]:
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    remainder = n - sum(counts)
    fractions = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(remainder):
        counts[fractions[i]] += 1
    return counts


# -------------------------------------------------------------- augmentation

def adjust_brightness(image: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(image + delta, 0.0, 1.0)


def adjust_contrast(image: np.ndarray, delta: float) -> np.ndarray:
    """Scale contrast about the 0.5 midpoint by (1 + delta)."""
    return np.clip((image - 0.5) * (1.0 + delta) + 0.5, 0.0, 1.0)


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear sampling, zero outside."""
    if degrees == 0.0:
        return image.copy()
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: destination pixel -> source location
    sx = cos_t * (xs - cx) + sin_t * (ys - cy) + cx
    sy = -sin_t * (xs - cx) + cos_t * (ys - cy) + cy
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0

    def sample(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros(image.shape, dtype=np.float64)
        vals[inside] = image[yy[inside], xx[inside]]
        return vals

    wa = ((1 - fx) * (1 - fy))[..., None]
    wb = (fx * (1 - fy))[..., None]
    wc = ((1 - fx) * fy)[..., None]
    wd = (fx * fy)[..., None]
    out = (wa * sample(y0, x0) + wb * sample(y0, x0 + 1)
           + wc * sample(y0 + 1, x0) + wd * sample(y0 + 1, x0 + 1))
    return np.clip(out, 0.0, 1.0)


def crop_resize(image: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    from .imaging import resize

    h, w = image.shape[:2]
    if size <= 0 or top < 0 or left < 0 or top + size > h or left + size > w:
        raise ConfigError(f"crop ({top}, {left}, {size}) outside {h}x{w} image")
    return resize(image[top:top + size, left:left + size], h)


def augment(image: np.ndarray, params: AugmentParams,
            rng: np.random.Generator) -> np.ndarray:
    """Randomly composed crop/rotation/brightness/contrast within the
    configured ranges. All ranges zero -> the image passes through unchanged."""
    out = np.asarray(image, dtype=np.float64)
    h, w = out.shape[:2]
    if h != w:
        raise ConfigError(f"augment expects a square image, got {out.shape}")
    if params.crop_fraction > 0:
        frac = 1.0 - rng.uniform(0.0, params.crop_fraction)
        size = max(1, int(round(frac * h)))
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        out = crop_resize(out, top, left, size)
    if params.rotation_degrees > 0:
        out = rotate(out, float(rng.uniform(-params.rotation_degrees,
                                            params.rotation_degrees)))
    if params.brightness_delta > 0:
        out = adjust_brightness(out, float(rng.uniform(-params.brightness_delta,
                                                       params.brightness_delta)))
    if params.contrast_delta > 0:
        out = adjust_contrast(out, float(rng.uniform(-params.contrast_delta,
                                                     params.contrast_delta)))
    return out


def record_rng(seed: int, record_id: str) -> np.random.Generator:
    """Deterministic per-record RNG so augmentation is reproducible."""
    digest = hashlib.sha256(f"{seed}:{record_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# ---------------------------------------------------------- confusion matrix

@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels, both in code order."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix)
        if m.shape != (NUM_CLASSES, NUM_CLASSES):
            raise TrainingError(
                f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {m.shape}"
            )
        if (m < 0).any():
            raise TrainingError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "matrix", m.astype(np.int64))

    @classmethod
    def from_pairs(cls, true_codes, pred_codes) -> "ConfusionMatrix":
        m = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        for t, p in zip(true_codes, pred_codes):
            m[t, p] += 1
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.matrix))

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise TrainingError("confusion matrix is empty")
        return self.correct / self.total

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ",".join(label.display_name for label in EmotionLabel)
        lines = [header]
        for row in self.matrix:
            lines.append(",".join(str(int(v)) for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path

    def to_png(self, path: str | Path) -> Path:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = [label.display_name for label in EmotionLabel]
        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(self.matrix, cmap="Blues")
        ax.set_xticks(range(NUM_CLASSES), names, rotation=45, ha="right")
        ax.set_yticks(range(NUM_CLASSES), names)
        ax.set_xlabel("Predicted")
        ax.set_ylabel("True")
        for i in range(NUM_CLASSES):
            for j in range(NUM_CLASSES):
                ax.text(j, i, str(self.matrix[i, j]), ha="center", va="center",
                        fontsize=8)
        fig.colorbar(im)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        return path


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class EpochStats:
    train_loss: float
    val_accuracy: float
    lr: float


@dataclass(frozen=True)
class TrainHistory:
    epochs: tuple[EpochStats, ...]
    seed: int
    best_epoch: int
    best_val_accuracy: float
    checkpoint_path: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.epochs:
            raise TrainingError("history must cover at least one epoch")

    @property
    def lr_trace(self) -> list[float]:
        return [e.lr for e in self.epochs]


def _gather_features(
    pipeline: FeaturePipeline,
    records: list[SampleRecord],
    mask: StreamMask,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    bundles = extract_bundles(pipeline, records, workers=workers)
    fmat = np.stack([assemble(bundles[r.id], mask) for r in records])
    labels = np.array([r.label.code for r in records], dtype=np.int64)
    return fmat, labels


def _labeled_split(manifest: DatasetManifest, split: str) -> list[SampleRecord]:
    return [r for r in manifest.split_records(split) if r.label is not None]


class _FineTuner:
    """Backpropagates fused-feature gradients into small-CNN backbones."""

    def __init__(self, pipeline: ImageFeaturePipeline, config: PipelineConfig,
                 mask: StreamMask):
        if not isinstance(pipeline.face_backbone, SmallCNNBackbone):
            raise ConfigError(
                "fine-tuning supports small_cnn backbones only; the transfer "
                "backbone stays frozen"
            )
        self.pipeline = pipeline
        self.config = config
        self.mask = mask
        self.df = config.deep_face_dim
        self.db = config.background_dim

    def batch_features(self, records: list[SampleRecord]) -> tuple[np.ndarray, list]:
        rows, caches = [], []
        for rec in records:
            bundle = self.pipeline.bundle(rec)
            rows.append(assemble(bundle, self.mask))
            caches.append(rec)
        return np.stack(rows), caches

    def apply(self, records: list[SampleRecord], dfmat: np.ndarray, lr: float) -> None:
        from .geometry import AU_FEATURE_LEN, VISIBLE_FEATURE_LEN

        face_params = self.pipeline.face_backbone.params
        bg_params = self.pipeline.background_params
        bg_slot = self.df + AU_FEATURE_LEN + VISIBLE_FEATURE_LEN
        for rec, drow in zip(records, dfmat):
            if self.mask.face:
                crop = self.pipeline.face_crop_for(rec)
                _, cache = smallcnn.forward_trace(face_params, crop)
                grads, _ = smallcnn.backward(face_params, cache, drow[: self.df])
                _sgd_cnn(face_params, grads, lr)
            if self.mask.background:
                bg = self.pipeline.background_image(rec)
                from .imaging import resize

                img = resize(bg.pixels, bg_params.input_size)
                _, cache = smallcnn.forward_trace(bg_params, img)
                grads, _ = smallcnn.backward(
                    bg_params, cache, drow[bg_slot: bg_slot + self.db]
                )
                _sgd_cnn(bg_params, grads, lr)


def _sgd_cnn(params: smallcnn.SmallCNNParams, grads: dict, lr: float) -> None:
    for w, dw in zip(params.conv_weights, grads["conv_weights"]):
        w -= lr * dw
    for b, db in zip(params.conv_biases, grads["conv_biases"]):
        b -= lr * db
    params.fc_weight -= lr * grads["fc_weight"]
    params.fc_bias -= lr * grads["fc_bias"]


def train(
    config: PipelineConfig,
    manifest: DatasetManifest,
    pipeline: FeaturePipeline,
    mask: StreamMask,
    workers: int = 1,
) -> tuple[ClassifierParams, TrainHistory]:
    """Minibatch gradient descent over the fusion head.

    Adaptive learning rate: halved (down to the floor) whenever validation
    accuracy fails to improve for ``lr_plateau_patience`` consecutive
    epochs. Returns the best-validation parameters and the epoch history.
    When ``fine_tune_backbones`` is enabled and the pipeline carries
    small-CNN backbones, feature gradients also flow into those backbones.
    """
    train_records = _labeled_split(manifest, "train")
    val_records = _labeled_split(manifest, "val")
    if not train_records:
        raise TrainingError("train split is empty")
    if not val_records:
        raise TrainingError("val split is empty")

    fine_tuner = None
    if config.fine_tune_backbones:
        if not isinstance(pipeline, ImageFeaturePipeline):
            raise ConfigError("fine-tuning requires the image feature pipeline")
        fine_tuner = _FineTuner(pipeline, config, mask)

    rng = np.random.default_rng(config.seed)
    if fine_tuner is None:
        f_train, y_train = _gather_features(pipeline, train_records, mask, workers)
    else:
        f_train, y_train = fine_tuner.batch_features(train_records)[0], np.array(
            [r.label.code for r in train_records], dtype=np.int64
        )
    f_val, y_val = _gather_features(pipeline, val_records, mask, workers)

    total_dim = f_train.shape[1]
    if total_dim != config.total_fusion_dim:
        raise ConfigError(
            f"feature width {total_dim} does not match config total "
            f"{config.total_fusion_dim}"
        )
    params = init_classifier(total_dim, config.hidden_dim, rng)

    lr = config.initial_lr
    best_val = -1.0
    best_params = params.copy()
    best_epoch = 0
    plateau = 0
    epochs: list[EpochStats] = []

    n = len(train_records)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if fine_tuner is not None:
                batch_records = [train_records[i] for i in idx]
                fb, _ = fine_tuner.batch_features(batch_records)
            else:
                batch_records = None
                fb = f_train[idx]
            batch_loss, grads = gradient_batch(params, fb, y_train[idx])
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start} "
                    f"(lr={lr}); aborting"
                )
            params.w1 -= lr * grads.w1
            params.b1 -= lr * grads.b1
            params.w2 -= lr * grads.w2
            params.b2 -= lr * grads.b2
            if fine_tuner is not None:
                fine_tuner.apply(batch_records, grads.f, lr)
            losses.append(batch_loss * len(idx))
        train_loss = float(np.sum(losses) / n)

        if fine_tuner is not None:
            f_val, y_val = _gather_features(pipeline, val_records, mask, workers)
        _, val_probs = forward_batch(params, f_val)
        val_acc = float((val_probs.argmax(axis=1) == y_val).mean())
        epochs.append(EpochStats(train_loss=train_loss, val_accuracy=val_acc, lr=lr))

        if val_acc > best_val:
            best_val = val_acc
            best_params = params.copy()
            best_epoch = epoch
            plateau = 0
        else:
            plateau += 1
            if plateau >= config.lr_plateau_patience:
                lr = max(lr * config.lr_decay_factor, config.lr_floor)
                plateau = 0

        if config.early_stop_train_acc is not None:
            if fine_tuner is not None:
                f_train, _ = fine_tuner.batch_features(train_records)
            _, train_probs = forward_batch(params, f_train)
            train_acc = float((train_probs.argmax(axis=1) == y_train).mean())
            if train_acc >= config.early_stop_train_acc:
                best_params = params.copy()
                best_epoch = epoch
                best_val = val_acc
                break

    history = TrainHistory(
        epochs=tuple(epochs),
        seed=config.seed,
        best_epoch=best_epoch,
        best_val_accuracy=best_val,
    )
    return best_params, history


def evaluate(
    params: ClassifierParams,
    manifest: DatasetManifest,
    split: str,
    pipeline: FeaturePipeline,
    mask: StreamMask,
    workers: int = 1,
) -> tuple[float, ConfusionMatrix]:
    """Accuracy (trace over total) and the full confusion matrix."""
    records = _labeled_split(manifest, split)
    if not records:
        raise TrainingError(f"split {split!r} has no labeled records")
    fmat, labels = _gather_features(pipeline, records, mask, workers)
    _, probs = forward_batch(params, fmat)
    preds = probs.argmax(axis=1)
    cm = ConfusionMatrix.from_pairs(labels, preds)

    class_counts = np.bincount(labels, minlength=NUM_CLASSES)
    if not (cm.row_sums() == class_counts).all():
        raise TrainingError("confusion matrix row sums disagree with class counts")
    if cm.total != len(records):
        raise TrainingError("confusion matrix total disagrees with split size")
    accuracy = cm.accuracy
    return accuracy, cm


@dataclass(frozen=True)
class AblationReport:
    rows: tuple[tuple[StreamMask, float], ...]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["F,B,P,accuracy"]
        for mask, acc in self.rows:
            lines.append(
                f"{int(mask.face)},{int(mask.background)},{int(mask.place)},{acc:.6f}"
            )
        path.write_text("\n".join(lines) + "\n")
        return path

    def accuracy_for(self, label: str) -> float:
        for mask, acc in self.rows:
            if mask.label() == StreamMask.parse(label).label():
                return acc
        raise TrainingError(f"no ablation row for mask {label!r}")


def ablation_run(
    config: PipelineConfig,
    manifest: DatasetManifest,
    pipeline: FeaturePipeline,
    masks: list[StreamMask],
    eval_split: str = "test",
    workers: int = 1,
) -> AblationReport:
    """Train and evaluate one model per stream mask with a shared seed."""
    if not masks:
        raise TrainingError("ablation needs at least one stream mask")
    rows = []
    for mask in masks:
        params, _ = train(config, manifest, pipeline, mask, workers=workers)
        acc, _ = evaluate(params, manifest, eval_split, pipeline, mask, workers=workers)
        rows.append((mask, acc))
    return AblationReport(rows=tuple(rows))
