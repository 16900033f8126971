"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``PSMDETECT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pyfallback

BACKEND = "python"
if not os.environ.get("PSMDETECT_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pyfallback
    else:
        BACKEND = "cython"
else:
    _impl = _pyfallback

pair_counts = _impl.pair_counts
smo_solve = _impl.smo_solve


def backends():
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _pyfallback}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
