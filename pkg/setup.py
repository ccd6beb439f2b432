"""Build script for the compiled kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time); building it just makes decoding and training a few
times faster. `pip install -e . --no-build-isolation` compiles it in place.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "capfill.kernels._native",
        ["src/capfill/kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-march=native"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,  # no compiler -> numpy fallback, not a failed install
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
