"""Backend selection for the pixel kernels.

The compiled extension is used when it was built; otherwise, or when
``RETINA_PIPELINE_PURE_PYTHON`` is set to a non-empty value, the numpy
fallback is used. Both backends return bit-identical results.
"""
import importlib
import os

_BACKENDS = {"cython": "retina_pipeline._ckernels", "python": "retina_pipeline._pykernels"}


def load_backend(name):
    return importlib.import_module(_BACKENDS[name])


def available_backends():
    names = []
    for name in _BACKENDS:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


if os.environ.get("RETINA_PIPELINE_PURE_PYTHON"):
    BACKEND = "python"
else:
    BACKEND = "cython" if "cython" in available_backends() else "python"

_impl = load_backend(BACKEND)
separable_blur = _impl.separable_blur
bilinear_sample = _impl.bilinear_sample
