"""Build script: compiles the optional LOF scoring kernel.

The package works without the compiled extension (a NumPy fallback is
selected at import time), so a failed cythonize/compile is downgraded to
a warning rather than aborting the install.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "ard._kernels._lof_cy",
                sources=["src/ard/_kernels/_lof_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3, "embedsignature": True},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    warnings.warn(f"building without compiled LOF kernel: {exc}")

setup(ext_modules=ext_modules)
