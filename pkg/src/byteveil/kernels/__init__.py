"""Numeric kernels with a selectable backend.

Set BYTEVEIL_BACKEND=numpy to force the pure-NumPy implementations, or
BYTEVEIL_BACKEND=numba to require the compiled ones. Default ("auto"):
numba when importable, NumPy otherwise. Both backends implement the same
contracts; results agree to floating-point roundoff.
"""

import os

_choice = os.environ.get("BYTEVEIL_BACKEND", "auto").strip().lower()

if _choice in ("auto", "numba"):
    try:
        from .nb_backend import conv1d, pool_backward_to_z, select_bytes_batch

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from .np_backend import conv1d, pool_backward_to_z, select_bytes_batch

        BACKEND = "numpy"
elif _choice == "numpy":
    from .np_backend import conv1d, pool_backward_to_z, select_bytes_batch

    BACKEND = "numpy"
else:
    raise ValueError(
        f"unrecognized BYTEVEIL_BACKEND={_choice!r}; expected numpy, numba or auto"
    )

__all__ = ["BACKEND", "conv1d", "pool_backward_to_z", "select_bytes_batch"]
