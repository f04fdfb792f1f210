"""Build script for the optional compiled kernels.

The package works without a C compiler: if Cython or the build fails the
pure-Python kernels in ``deeplcc._kernels_py`` are used instead.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DEEPLCC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "deeplcc._kernels",
                    sources=["src/deeplcc/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
