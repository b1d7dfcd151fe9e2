"""Feature fusion and the two-layer classification head.

The fused vector F has a fixed slot layout [face_deep | au | visible |
background | place]; ablation masks zero out slots instead of reshaping, so
one parameter shape serves every stream combination. The head is
linear -> ReLU -> linear -> softmax with cross-entropy loss; gradients are
analytic and checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .context import PlaceInfo
from .errors import CheckpointError, SaferError, ShapeError
from .geometry import AU_FEATURE_LEN, VISIBLE_FEATURE_LEN
from .labels import NUM_CLASSES, EmotionLabel


@dataclass(frozen=True)
class FeatureBundle:
    """The three stream outputs for one sample, ready for fusion."""

    face_deep: np.ndarray
    au: np.ndarray
    visible: np.ndarray
    background: np.ndarray
    place: np.ndarray
    place_info: PlaceInfo

    def __post_init__(self) -> None:
        for name in ("face_deep", "au", "visible", "background", "place"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.isfinite(arr).all():
                raise SaferError(f"feature bundle slot {name!r} contains non-finite values")
            object.__setattr__(self, name, arr)
        if self.au.shape[0] != AU_FEATURE_LEN:
            raise ShapeError(f"au slot must have length {AU_FEATURE_LEN}, got {self.au.shape[0]}")
        if self.visible.shape[0] != VISIBLE_FEATURE_LEN:
            raise ShapeError(
                f"visible slot must have length {VISIBLE_FEATURE_LEN}, got {self.visible.shape[0]}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        """(D_f, D_b, D_l) of this bundle."""
        return self.face_deep.shape[0], self.background.shape[0], self.place.shape[0]


@dataclass(frozen=True)
class StreamMask:
    face: bool = True
    background: bool = True
    place: bool = True

    def __post_init__(self) -> None:
        if not (self.face or self.background or self.place):
            raise SaferError("at least one stream must be enabled")

    def label(self) -> str:
        parts = [n for n, on in (("F", self.face), ("B", self.background),
                                 ("P", self.place)) if on]
        return "+".join(parts)

    @classmethod
    def parse(cls, text: str) -> "StreamMask":
        """Parse mask strings like "F", "FB", "F+B+P"."""
        letters = set(text.replace("+", "").upper())
        unknown = letters - {"F", "B", "P"}
        if unknown:
            raise SaferError(f"unknown stream letters {sorted(unknown)} in mask {text!r}")
        return cls(face="F" in letters, background="B" in letters, place="P" in letters)


@dataclass
class ClassifierParams:
    """Weights of the fusion head: two fully-connected layers, ReLU between."""

    w1: np.ndarray  # (H, total_dim)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (NUM_CLASSES, H)
    b2: np.ndarray  # (NUM_CLASSES,)

    def __post_init__(self) -> None:
        if self.w2.shape[0] != NUM_CLASSES or self.b2.shape != (NUM_CLASSES,):
            raise ShapeError(
                f"output layer must produce {NUM_CLASSES} logits, got w2 {self.w2.shape}"
            )
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[1] != self.w1.shape[0]:
            raise ShapeError("inconsistent hidden dimensions between layers")

    @property
    def total_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.w1.copy(), self.b1.copy(),
                                self.w2.copy(), self.b2.copy())


def init_classifier(total_dim: int, hidden_dim: int,
                    rng: np.random.Generator) -> ClassifierParams:
    """He-initialized hidden layer; zero-initialized output layer so a fresh
    head predicts the uniform distribution (no arbitrary confidence to
    unlearn at the very small initial learning rate)."""
    w1 = rng.normal(0.0, np.sqrt(2.0 / total_dim), size=(hidden_dim, total_dim))
    return ClassifierParams(w1=w1, b1=np.zeros(hidden_dim),
                            w2=np.zeros((NUM_CLASSES, hidden_dim)),
                            b2=np.zeros(NUM_CLASSES))


def assemble(bundle: FeatureBundle, mask: StreamMask) -> np.ndarray:
    """Concatenate the slots; disabled streams contribute zeros in place."""
    face = (bundle.face_deep, bundle.au, bundle.visible)
    parts = [p if mask.face else np.zeros_like(p) for p in face]
    parts.append(bundle.background if mask.background else np.zeros_like(bundle.background))
    parts.append(bundle.place if mask.place else np.zeros_like(bundle.place))
    return np.concatenate(parts)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Shift-invariant stable softmax along the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ClassifierParams, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax probabilities for one fused vector."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.shape[0] != params.total_dim:
        raise ShapeError(
            f"fused vector has length {f.shape[0]}, classifier expects {params.total_dim}"
        )
    hidden = np.maximum(params.w1 @ f + params.b1, 0.0)
    logits = params.w2 @ hidden + params.b2
    return logits, softmax(logits)


def forward_batch(params: ClassifierParams, fmat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward: fmat is (N, total_dim)."""
    if fmat.shape[1] != params.total_dim:
        raise ShapeError(
            f"batch has width {fmat.shape[1]}, classifier expects {params.total_dim}"
        )
    hidden = np.maximum(fmat @ params.w1.T + params.b1, 0.0)
    logits = hidden @ params.w2.T + params.b2
    return logits, softmax(logits)


def cross_entropy_from_logits(logits: np.ndarray, label: EmotionLabel) -> float:
    """-log p[label] via log-sum-exp, never forming the probabilities."""
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label.code])


def loss(probabilities: np.ndarray, true_label: EmotionLabel) -> float:
    """Cross-entropy from a probability vector; clamped away from log(0)."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.shape != (NUM_CLASSES,):
        raise ShapeError(f"probability vector must have shape ({NUM_CLASSES},), got {p.shape}")
    return float(-np.log(max(p[true_label.code], np.finfo(np.float64).tiny)))


@dataclass
class ClassifierGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    f: np.ndarray = field(default=None)  # gradient w.r.t. the fused input


def gradient(params: ClassifierParams, f: np.ndarray,
             true_label: EmotionLabel) -> ClassifierGrads:
    """Analytic gradients of the cross-entropy loss for one sample."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    pre = params.w1 @ f + params.b1
    hidden = np.maximum(pre, 0.0)
    logits = params.w2 @ hidden + params.b2
    p = softmax(logits)
    dlogits = p.copy()
    dlogits[true_label.code] -= 1.0

    dw2 = np.outer(dlogits, hidden)
    db2 = dlogits
    dhidden = params.w2.T @ dlogits
    dpre = dhidden * (pre > 0)
    dw1 = np.outer(dpre, f)
    db1 = dpre
    df = params.w1.T @ dpre
    return ClassifierGrads(w1=dw1, b1=db1, w2=dw2, b2=db2, f=df)


def gradient_batch(params: ClassifierParams, fmat: np.ndarray,
                   labels: np.ndarray) -> tuple[float, ClassifierGrads]:
    """Mean loss and mean gradients over a minibatch.

    ``labels`` is an int array of label codes. Also returns the gradient
    w.r.t. the inputs (N, total_dim) for backbone fine-tuning.
    """
    n = fmat.shape[0]
    pre = fmat @ params.w1.T + params.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params.w2.T + params.b2
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    mean_loss = float(-logp[np.arange(n), labels].mean())

    p = np.exp(logp)
    dlogits = p
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    dw2 = dlogits.T @ hidden
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ params.w2
    dpre = dhidden * (pre > 0)
    dw1 = dpre.T @ fmat
    db1 = dpre.sum(axis=0)
    dfmat = dpre @ params.w1
    return mean_loss, ClassifierGrads(w1=dw1, b1=db1, w2=dw2, b2=db2, f=dfmat)


def predict(params: ClassifierParams, bundle: FeatureBundle,
            mask: StreamMask) -> tuple[EmotionLabel, np.ndarray]:
    """Predicted label (argmax, ties to the lowest code) and probabilities."""
    _, probs = forward(params, assemble(bundle, mask))
    return EmotionLabel.from_code(int(np.argmax(probs))), probs


# ------------------------------------------------------------ checkpoint file
# Layout: one JSON header line (config hash, dims, training mask, array
# manifest), then the raw little-endian float32 array data back to back.

_CHECKPOINT_MAGIC = "safer-checkpoint"
_ARRAY_ORDER = ("w1", "b1", "w2", "b2")


def save_checkpoint(path: str | Path, params: ClassifierParams,
                    config: PipelineConfig, mask: StreamMask) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": _CHECKPOINT_MAGIC,
        "version": 1,
        "config_hash": config.content_hash(),
        "dims": {
            "total_dim": params.total_dim,
            "hidden_dim": params.hidden_dim,
            "classes": NUM_CLASSES,
            "deep_face_dim": config.deep_face_dim,
            "background_dim": config.background_dim,
            "place_dim": config.place_dim,
        },
        "mask": {"face": mask.face, "background": mask.background, "place": mask.place},
        "arrays": [
            {"name": name, "shape": list(getattr(params, name).shape)}
            for name in _ARRAY_ORDER
        ],
    }
    with path.open("wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for name in _ARRAY_ORDER:
            fh.write(getattr(params, name).astype("<f4").tobytes())
    return path


def load_checkpoint(path: str | Path) -> tuple[ClassifierParams, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    with path.open("rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
        if header.get("format") != _CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a classifier checkpoint")
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise CheckpointError(
                    f"checkpoint {path} truncated while reading array {spec['name']!r}"
                )
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"checkpoint {path} has trailing data")
    try:
        params = ClassifierParams(**{name: arrays[name] for name in _ARRAY_ORDER})
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} missing array {exc}") from exc
    return params, header


def checkpoint_mask(header: dict) -> StreamMask:
    m = header.get("mask", {})
    return StreamMask(face=bool(m.get("face", True)),
                      background=bool(m.get("background", True)),
                      place=bool(m.get("place", True)))
