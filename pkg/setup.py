import os

import numpy as np
from setuptools import Extension, setup

# -ffp-contract=off keeps the compiled kernel bit-identical to the numpy fallback
compile_args = ["-O3", "-ffp-contract=off"]

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "opfix._kernels",
                ["src/opfix/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=compile_args,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"embedsignature": True},
    )
except ImportError:
    extensions = []

if os.environ.get("OPFIX_NO_EXTENSION"):
    extensions = []

setup(ext_modules=extensions)
