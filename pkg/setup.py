"""Builds the optional compiled kernel extension.

The package is fully functional without it (numpy fallback selected at
import time); the extension just makes the hot loops fast. Set
BLOOMSEG_SKIP_NATIVE=1 to force a pure-Python install.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("BLOOMSEG_SKIP_NATIVE"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "bloomseg._native",
                    ["src/bloomseg/_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    # -ffp-contract=off: keep float arithmetic bit-identical
                    # to the numpy fallback (no FMA contraction).
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
