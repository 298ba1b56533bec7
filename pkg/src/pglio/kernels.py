"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``PGLIO_PURE_PYTHON=1``
to force the reference implementation.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("PGLIO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

admit_points = _impl.admit_points
bilinear_sample = _impl.bilinear_sample
