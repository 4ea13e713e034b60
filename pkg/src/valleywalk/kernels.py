"""Backend selection for the stepping kernels.

The compiled extension is used when it imports; setting
``VALLEYWALK_BACKEND=python`` forces the interpreted fallback.
"""
import os

_requested = os.environ.get("VALLEYWALK_BACKEND", "").strip().lower()

if _requested == "python":
    from . import _pykernels as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        from . import _pykernels as _impl

BACKEND = _impl.BACKEND
HIT_HI = _impl.HIT_HI
HIT_LO = _impl.HIT_LO
EDGE_LEFT = _impl.EDGE_LEFT
EDGE_RIGHT = _impl.EDGE_RIGHT
NEED_U = _impl.NEED_U
BUDGET = _impl.BUDGET
DONE = _impl.DONE

walk = _impl.walk
fast_valley = _impl.fast_valley
valley_transform = _impl.valley_transform
crossing_batch = _impl.crossing_batch


def load(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` explicitly."""
    if name == "python":
        from . import _pykernels
        return _pykernels
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
