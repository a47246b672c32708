import os

from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the package falls back at import
    cythonize = None

build_ext = cythonize is not None and not os.environ.get("WSIMMD_NO_EXT")

# The exp/row-sum helper is compiled on its own with -ffast-math so exp() can
# vectorize; it is a static library, so the flag never reaches the link step
# (where it would switch the whole process to flush-to-zero).
libraries = [
    ("wsimmd_expsum", {
        "sources": ["src/wsimmd/_expsum.c"],
        "cflags": ["-O3", "-ffast-math"],
    })
] if build_ext else []

ext_modules = []
if build_ext:
    ext_modules = cythonize(
        [
            Extension(
                "wsimmd._core",
                ["src/wsimmd/_core.pyx"],
                include_dirs=["src/wsimmd"],
                libraries=["wsimmd_expsum", "m"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, libraries=libraries)
