import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SPLATSHARD_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "splatshard._raster_ext",
                ["src/splatshard/_raster_ext.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / fp contraction: the kernels must stay bit-reproducible
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
