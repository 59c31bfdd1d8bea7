"""Backend selection for the hot kernels.

Set ``CHANBOOST_BACKEND=numpy`` to force the pure-numpy fallback,
``CHANBOOST_BACKEND=numba`` to require the jitted kernels, or leave it
unset (``auto``) to use numba when importable. Both backends produce
bit-identical results; numba is just faster.
"""

import os

_requested = os.environ.get("CHANBOOST_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"CHANBOOST_BACKEND must be auto, numba, or numpy, got {_requested!r}")

if _requested == "numpy":
    from . import _numpy as _impl
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy as _impl
        BACKEND = "numpy"

stump_scan = _impl.stump_scan
tree_apply = _impl.tree_apply
scan_stack = _impl.scan_stack

__all__ = ["BACKEND", "stump_scan", "tree_apply", "scan_stack"]
