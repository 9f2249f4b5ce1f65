"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension; autodiff falls back to
numpy kernels when the build is unavailable (see fieldstream.autodiff.kernels).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fieldstream.autodiff._speedups",
                sources=["src/fieldstream/autodiff/_speedups.pyx"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
