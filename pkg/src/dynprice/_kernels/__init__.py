"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``DYNPRICE_KERNELS=python`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("DYNPRICE_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        kernels = _ckernels
        BACKEND = "cython"

VALUE_PDE = _pykernels.VALUE_PDE
PRICE_PDE = _pykernels.PRICE_PDE
STATUS_OK = _pykernels.STATUS_OK
STATUS_UNDERFLOW = _pykernels.STATUS_UNDERFLOW
STATUS_NONFINITE = _pykernels.STATUS_NONFINITE
STATUS_MAXSTEPS = _pykernels.STATUS_MAXSTEPS


def get_kernels(backend=None):
    """Return the kernel module for ``backend`` ("python", "cython" or None for default)."""
    if backend is None:
        return kernels
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {backend!r}")
