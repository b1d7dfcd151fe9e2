"""Build script for the compiled convolution/pooling kernels.

The package works without the extension (a NumPy fallback is selected at
import time), but the compiled kernels are considerably faster for the
small-CNN forward/backward passes that dominate training time.

Build in place with:  python setup.py build_ext --inplace
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "safer.kernels._native",
        ["src/safer/kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
