import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("GPSEP_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext = Extension(
            "gpsep._core",
            ["src/gpsep/_core.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"] + openmp,
            extra_link_args=openmp,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
