"""Backend selection for the hot loops.

The compiled extension ``sdtl._ckernels`` is used when it was built; otherwise
the numpy implementations in ``sdtl._pykernels`` are used. Set
``SDTL_KERNELS=python`` to force the fallback.
"""
import os

import numpy as np

from sdtl import _pykernels

_compiled = None
if os.environ.get("SDTL_KERNELS", "").lower() != "python":
    try:
        from sdtl import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name=None):
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("sdtl._ckernels is not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def im2col(xp, k, stride):
    """(B, C, Hp, Wp) padded input -> (B, C*k*k, Ho*Wo) patch matrix."""
    return _impl.im2col(np.ascontiguousarray(xp), k, stride)


def col2im(cols, C, Hp, Wp, k, stride):
    """Adjoint of :func:`im2col`: scatter-add patch columns back to (B, C, Hp, Wp)."""
    return _impl.col2im(np.ascontiguousarray(cols), C, Hp, Wp, k, stride)


def haar_analysis(x):
    """(N, H, W) -> (4, N, H/2, W/2) stacked LL, HL, LH, HH."""
    return _impl.haar_analysis(np.ascontiguousarray(x))


def haar_synthesis(s):
    """(4, N, h, w) stacked subbands -> (N, 2h, 2w)."""
    return _impl.haar_synthesis(np.ascontiguousarray(s))
