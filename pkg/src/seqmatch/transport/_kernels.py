"""Pick the scaling-loop implementation at import time.

The compiled extension is used when it was built; setting
``SEQMATCH_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

if os.environ.get("SEQMATCH_PURE_PYTHON", "") not in ("", "0"):
    from ._sinkhorn_py import scaling_loop

    BACKEND = "python"
else:
    try:
        from ._sinkhorn import scaling_loop

        BACKEND = "cython"
    except ImportError:
        from ._sinkhorn_py import scaling_loop

        BACKEND = "python"

__all__ = ["BACKEND", "scaling_loop"]
