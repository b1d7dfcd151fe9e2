"""NumPy implementations of the convolution/pooling kernels.

This is the fallback backend used when the compiled extension is not
available (see ``safer.kernels``). Convolutions are valid-padding, stride 1,
channels-last; pooling is 2x2, stride 2, floor semantics (a trailing odd row
or column is dropped).

Shapes:
    x  : (H, W, Cin)            input image / activation
    w  : (kh, kw, Cin, Cout)    convolution weights
    b  : (Cout,)                bias
    y  : (H-kh+1, W-kw+1, Cout)
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def conv2d_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    kh, kw, cin, cout = w.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ValueError(f"input shape {x.shape} incompatible with weights {w.shape}")
    if x.shape[0] < kh or x.shape[1] < kw:
        raise ValueError(
            f"input {x.shape[:2]} smaller than kernel ({kh}, {kw}); no valid output"
        )
    # windows: (H', W', kh, kw, Cin)
    windows = sliding_window_view(x, (kh, kw), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    y = np.tensordot(windows, w, axes=([2, 3, 4], [0, 1, 2]))
    return y + b


def conv2d_valid_bwd(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_valid w.r.t. input, weights and bias."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    kh, kw, cin, cout = w.shape

    windows = sliding_window_view(x, (kh, kw), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    # dw[a, b, ci, co] = sum_{i,j} x[i+a, j+b, ci] * dy[i, j, co]
    dw = np.tensordot(windows, dy, axes=([0, 1], [0, 1])).transpose(0, 1, 2, 3)
    db = dy.sum(axis=(0, 1))

    # dx = full-correlation of dy with the spatially flipped kernel.
    dy_pad = np.pad(dy, ((kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    wf = w[::-1, ::-1, :, :]
    dyw = sliding_window_view(dy_pad, (kh, kw), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    dx = np.tensordot(dyw, wf, axes=([2, 3, 4], [0, 1, 3]))
    return dx, dw, db


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2. Returns (pooled, argmax in {0..3} per cell)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    h, w, c = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ValueError(f"input {x.shape} too small for 2x2 pooling")
    cells = (
        x[: 2 * ho, : 2 * wo]
        .reshape(ho, 2, wo, 2, c)
        .transpose(0, 2, 4, 1, 3)
        .reshape(ho, wo, c, 4)
    )
    arg = cells.argmax(axis=3).astype(np.int32)
    y = np.take_along_axis(cells, arg[..., None], axis=3)[..., 0]
    return y, arg


def maxpool2_bwd(arg: np.ndarray, dy: np.ndarray, in_shape: tuple[int, int, int]) -> np.ndarray:
    """Scatter pooled gradients back to the argmax positions."""
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    h, w, c = in_shape
    ho, wo, _ = dy.shape
    cells = np.zeros((ho, wo, c, 4), dtype=np.float64)
    np.put_along_axis(cells, arg[..., None].astype(np.int64), dy[..., None], axis=3)
    dx = np.zeros((h, w, c), dtype=np.float64)
    dx[: 2 * ho, : 2 * wo] = (
        cells.reshape(ho, wo, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * ho, 2 * wo, c)
    )
    return dx
