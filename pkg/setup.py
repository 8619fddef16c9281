"""Build the optional compiled kernels; the package works without them."""

import os
import platform
import sys

from setuptools import setup


def _math_flags():
    # vectorised tanh via glibc libmvec; opt out with ENROLLTSS_PORTABLE=1
    if os.environ.get("ENROLLTSS_PORTABLE") == "1":
        return [], []
    if sys.platform.startswith("linux") and platform.machine() == "x86_64":
        return ["-ffast-math", "-mavx2", "-mfma"], ["mvec", "m"]
    return [], []


ext_modules = []
if os.environ.get("ENROLLTSS_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        cflags, libs = _math_flags()
        ext_modules = cythonize(
            [
                Extension(
                    "enrolltss.autograd._kernels_ext",
                    ["src/enrolltss/autograd/_kernels_ext.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3", *cflags],
                    libraries=libs,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
