"""Convolution/pooling kernels with a compiled core and a NumPy fallback.

The compiled Cython extension is preferred when present; otherwise the NumPy
implementation is used transparently. Selection happens once at import time
and can be forced with the ``SAFER_KERNELS`` environment variable
(``native`` or ``numpy``). ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("SAFER_KERNELS", "auto").lower()
if _requested not in ("auto", "native", "numpy"):
    raise RuntimeError(
        f"SAFER_KERNELS must be 'native', 'numpy' or 'auto', got {_requested!r}"
    )

_backend = None
if _requested in ("auto", "native"):
    try:
        from . import _native as _backend  # type: ignore[no-redef]
    except ImportError:
        if _requested == "native":
            raise RuntimeError(
                "SAFER_KERNELS=native but the compiled extension is not built; "
                "run `python setup.py build_ext --inplace`"
            ) from None
if _backend is None:
    _backend = numpy_backend

BACKEND = _backend.NAME

conv2d_valid = _backend.conv2d_valid
conv2d_valid_bwd = _backend.conv2d_valid_bwd
maxpool2 = _backend.maxpool2
maxpool2_bwd = _backend.maxpool2_bwd


def available_backends() -> dict[str, object]:
    """All importable kernel backends, keyed by name (for tests/benchmarks)."""
    backends: dict[str, object] = {numpy_backend.NAME: numpy_backend}
    try:
        from . import _native

        backends[_native.NAME] = _native
    except ImportError:
        pass
    return backends
