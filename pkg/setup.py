import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "stagediff._kernels",
                ["src/stagediff/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
    )
except ImportError:
    # No Cython available: install pure-Python; the numpy fallback kernels
    # are selected at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
