"""Builds the optional compiled kernels; the package works without them."""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


FAST_FLAGS = ["-O3", "-ffast-math", "-march=native", "-fopenmp-simd"]


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
            return
        except Exception as exc:  # noqa: BLE001
            print(f"warning: optimized build of {ext.name} failed ({exc}); retrying with -O3")
        ext.extra_compile_args = ["-O3"]
        ext.extra_link_args = []
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    if os.environ.get("CURVEFLOW_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    fast = not os.environ.get("CURVEFLOW_PORTABLE_EXT")
    ext = Extension(
        "curveflow._kernels",
        ["src/curveflow/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # vectorized exp/tanh come from glibc's libmvec
        extra_compile_args=FAST_FLAGS if fast else ["-O3"],
        extra_link_args=["-lmvec"] if fast else [],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
