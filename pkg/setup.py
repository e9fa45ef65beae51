import os
import platform
import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    cythonize = None

# libmvec gives vectorized exp() without -ffast-math on x86-64 glibc
vexp = sys.platform.startswith("linux") and platform.machine() in ("x86_64", "AMD64")
macros = [("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")]
if vexp:
    macros.append(("LCMLORA_VEXP", "1"))

ext_modules = []
if cythonize is not None and not os.environ.get("LCMLORA_NO_EXTENSION"):
    ext_modules = cythonize(
        [
            Extension(
                "lcmlora._kernels",
                ["src/lcmlora/_kernels.pyx"],
                include_dirs=[np.get_include(), "src/lcmlora"],
                define_macros=macros,
                extra_compile_args=["-O3", "-fopenmp-simd", "-fno-math-errno"] if vexp else ["-O3"],
                libraries=["mvec", "m"] if vexp else [],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
