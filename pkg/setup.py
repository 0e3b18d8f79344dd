"""Build script for the optional compiled replay kernels.

The package is fully functional without the extension (a pure-Python
engine is selected at import time); the extension only accelerates the
online-training inner loop.  Build in place with:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - cython is a build-time dependency
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "cpsvuln.attack._replay",
                sources=["src/cpsvuln/attack/_replay.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=extensions)
