"""Build script: compiles the optional Cython tick-loop kernel.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes long-horizon simulations much faster.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("NETDRIFT_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "netdrift.engine._square_kernel",
                    ["src/netdrift/engine/_square_kernel.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
