"""LOF kernel backend selection.

The compiled extension is used when importable; otherwise the NumPy
implementation takes over. Set ``ARD_KERNEL=numpy`` (or ``cython``) to force
a backend, e.g. when benchmarking.
"""

import os

_requested = os.environ.get("ARD_KERNEL", "").lower()

if _requested == "numpy":
    from ._lof_np import pool_lof

    BACKEND = "numpy"
elif _requested in ("", "cython"):
    try:
        from ._lof_cy import pool_lof

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from ._lof_np import pool_lof

        BACKEND = "numpy"
else:
    raise ValueError(f"unknown ARD_KERNEL value {_requested!r}")

__all__ = ["pool_lof", "BACKEND"]
