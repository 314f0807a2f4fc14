"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``LSNET_BACKEND=python`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("LSNET_BACKEND", "").lower() == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

KDTree = _impl.KDTree
scatter_add_rows = _impl.scatter_add_rows

__all__ = ["BACKEND", "KDTree", "scatter_add_rows"]
