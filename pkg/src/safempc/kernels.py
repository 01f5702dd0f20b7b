"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_kernels_py`` module is used. Set ``SAFEMPC_PURE_PYTHON=1`` to
force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("SAFEMPC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

OK = _kernels_py.OK
BAD_VX = _kernels_py.BAD_VX
BAD_CURVATURE = _kernels_py.BAD_CURVATURE

pacejka = _impl.pacejka
vehicle_euler = _impl.vehicle_euler
vehicle_integrate = _impl.vehicle_integrate
segment_index = _impl.segment_index
mark_reachable = _impl.mark_reachable

__all__ = [
    "BACKEND", "OK", "BAD_VX", "BAD_CURVATURE", "pacejka", "vehicle_euler",
    "vehicle_integrate", "segment_index", "mark_reachable",
]
