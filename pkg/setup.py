"""Build the optional compiled kernels.

The package works without them: if Cython or a C compiler is missing the
extension is skipped and the numpy fallback is used at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("RETINA_PIPELINE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "retina_pipeline._ckernels",
                    ["src/retina_pipeline/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: results must match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
