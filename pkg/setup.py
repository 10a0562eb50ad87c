"""Build script for the compiled Monte Carlo kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed Cython build only costs speed.
"""
import os

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    npy_random_lib = os.path.join(os.path.dirname(numpy.__file__), "random", "lib")
    ext = Extension(
        "harvestopt._simkernel",
        ["src/harvestopt/_simkernel.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[npy_random_lib],
        libraries=["npyrandom"],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions())
