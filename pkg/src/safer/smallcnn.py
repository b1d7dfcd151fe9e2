"""The compact convolutional feature extractor.

Architecture: a stack of 2x2 valid convolutions (stride 1), each followed by
ReLU and 2x2 max pooling, then one fully-connected layer producing the
feature vector. With a 224 input and three conv layers the spatial trace is
223 -> 111 -> 110 -> 55 -> 54 -> 27 (conv valid, pool floor).

The same structure serves both the face deep-feature stream and the
background stream (independent parameter sets).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

KERNEL_SIZE = 2
POOL_SIZE = 2


def spatial_trace(input_size: int, n_layers: int) -> list[int]:
    """Spatial sizes after each conv and each pool, starting from the input."""
    sizes = []
    s = input_size
    for _ in range(n_layers):
        s = s - KERNEL_SIZE + 1
        sizes.append(s)
        s = s // POOL_SIZE
        sizes.append(s)
        if s < 1:
            raise ConfigError(
                f"input size {input_size} too small for {n_layers} conv/pool layers"
            )
    return sizes


@dataclass
class SmallCNNParams:
    """Weights of the small CNN. Kernel size and pooling window are fixed."""

    conv_weights: list[np.ndarray]   # each (2, 2, cin, cout)
    conv_biases: list[np.ndarray]    # each (cout,)
    fc_weight: np.ndarray            # (out_dim, flattened final map)
    fc_bias: np.ndarray              # (out_dim,)
    input_size: int

    def __post_init__(self) -> None:
        for w in self.conv_weights:
            if w.shape[:2] != (KERNEL_SIZE, KERNEL_SIZE):
                raise ConfigError(f"conv kernels must be 2x2, got {w.shape[:2]}")

    @property
    def n_layers(self) -> int:
        return len(self.conv_weights)

    @property
    def output_dim(self) -> int:
        return self.fc_weight.shape[0]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(w.shape[3] for w in self.conv_weights)

    def copy(self) -> "SmallCNNParams":
        return SmallCNNParams(
            conv_weights=[w.copy() for w in self.conv_weights],
            conv_biases=[b.copy() for b in self.conv_biases],
            fc_weight=self.fc_weight.copy(),
            fc_bias=self.fc_bias.copy(),
            input_size=self.input_size,
        )


def init_small_cnn(
    input_size: int,
    channels: tuple[int, ...],
    out_dim: int,
    rng: np.random.Generator,
    in_channels: int = 3,
) -> SmallCNNParams:
    """He-style initialization; biases start at zero."""
    trace = spatial_trace(input_size, len(channels))
    conv_weights, conv_biases = [], []
    cin = in_channels
    for cout in channels:
        fan_in = KERNEL_SIZE * KERNEL_SIZE * cin
        conv_weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                       size=(KERNEL_SIZE, KERNEL_SIZE, cin, cout)))
        conv_biases.append(np.zeros(cout))
        cin = cout
    flat = trace[-1] * trace[-1] * channels[-1]
    fc_weight = rng.normal(0.0, np.sqrt(1.0 / flat), size=(out_dim, flat))
    return SmallCNNParams(
        conv_weights=conv_weights,
        conv_biases=conv_biases,
        fc_weight=fc_weight,
        fc_bias=np.zeros(out_dim),
        input_size=input_size,
    )


def _check_input(params: SmallCNNParams, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    expected = (params.input_size, params.input_size, 3)
    if image.shape != expected:
        raise ShapeError(f"expected input shape {expected}, got {image.shape}")
    return image


def forward_trace(params: SmallCNNParams, image: np.ndarray) -> tuple[np.ndarray, dict]:
    """Forward pass keeping every intermediate needed for feature maps and
    backprop. Returns (feature vector, cache)."""
    x = _check_input(params, image)
    cache: dict = {"inputs": [], "pre_relu": [], "conv_out": [], "pool_arg": [],
                   "pool_in_shape": []}
    for w, b in zip(params.conv_weights, params.conv_biases):
        cache["inputs"].append(x)
        z = kernels.conv2d_valid(x, w, b)
        cache["pre_relu"].append(z)
        a = np.maximum(z, 0.0)
        cache["conv_out"].append(a)
        cache["pool_in_shape"].append(a.shape)
        x, arg = kernels.maxpool2(a)
        cache["pool_arg"].append(arg)
    cache["flat_shape"] = x.shape
    flat = x.reshape(-1)
    cache["flat"] = flat
    vec = params.fc_weight @ flat + params.fc_bias
    return vec, cache


def forward(params: SmallCNNParams, image: np.ndarray) -> np.ndarray:
    """Feature vector of length output_dim for one image."""
    vec, _ = forward_trace(params, image)
    return vec


def backward(params: SmallCNNParams, cache: dict, dvec: np.ndarray):
    """Gradients w.r.t. all parameters and the input image.

    Returns (grads dict with conv_weights/conv_biases/fc_weight/fc_bias
    lists/arrays, dimage).
    """
    dfc_w = np.outer(dvec, cache["flat"])
    dfc_b = dvec.copy()
    dx = (params.fc_weight.T @ dvec).reshape(cache["flat_shape"])

    dconv_w: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    dconv_b: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    for layer in reversed(range(params.n_layers)):
        dx = kernels.maxpool2_bwd(cache["pool_arg"][layer], dx,
                                  cache["pool_in_shape"][layer])
        dx = dx * (cache["pre_relu"][layer] > 0)
        dx, dw, db = kernels.conv2d_valid_bwd(
            cache["inputs"][layer], params.conv_weights[layer], dx
        )
        dconv_w[layer] = dw
        dconv_b[layer] = db
    grads = {
        "conv_weights": dconv_w,
        "conv_biases": dconv_b,
        "fc_weight": dfc_w,
        "fc_bias": dfc_b,
    }
    return grads, dx


def conv_activations(params: SmallCNNParams, image: np.ndarray) -> dict[str, np.ndarray]:
    """Post-ReLU activation grid of every conv layer, keyed conv1..convK."""
    _, cache = forward_trace(params, image)
    return {f"conv{k + 1}": cache["conv_out"][k] for k in range(params.n_layers)}
