"""Build script: compiles the optional Cython path-aggregation kernel.

The package works without the extension (a numpy implementation is selected
at import time), so a failed compile only costs speed.
"""

import numpy as np
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "stereopipe.sgm._aggregate_cy",
                ["src/stereopipe/sgm/_aggregate_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
