"""Build script for the optional compiled kernel extension.

The package works without the extension; a failed or skipped build leaves
the numpy kernels in charge.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("EDGEBURST_NO_EXT", "") in ("", "0"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "edgeburst._kernels",
                    ["src/edgeburst/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-fcx-limited-range"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
