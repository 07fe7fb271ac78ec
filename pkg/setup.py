"""Build script: compiles the Cython stepping kernels.

The extension is optional; if the toolchain is unavailable the package
installs anyway and falls back to the pure-numpy kernels at import time
(see gradphi.core).
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "gradphi._core_cy",
        ["src/gradphi/_core_cy.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps per-site arithmetic IEEE-ordered so the
        # compiled kernels track the numpy fallback closely.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
