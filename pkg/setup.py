import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the package falls back to numpy kernels
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("HYBRIDSNN_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "hybridsnn._ckernels",
                ["src/hybridsnn/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
