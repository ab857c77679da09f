"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``NATIVESR_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("NATIVESR_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

banded_lastaxis = _impl.banded_lastaxis
bspline_prefilter_lastaxis = _impl.bspline_prefilter_lastaxis
laplacian7 = _impl.laplacian7


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
