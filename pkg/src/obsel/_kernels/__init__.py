"""Shingle extraction and hashing kernels.

The compiled extension (``_fast``) is used when it was built; otherwise the
pure-Python implementation in ``_pure`` is selected.  Setting
``OBSEL_PURE_PYTHON=1`` forces the fallback.
"""

import os

from obsel._kernels import _pure

if os.environ.get("OBSEL_PURE_PYTHON", "") not in ("", "0"):
    extract, fnv1a_64 = _pure.extract, _pure.fnv1a_64
    BACKEND = "python"
else:
    try:
        from obsel._kernels import _fast
    except ImportError:
        extract, fnv1a_64 = _pure.extract, _pure.fnv1a_64
        BACKEND = "python"
    else:
        extract, fnv1a_64 = _fast.extract, _fast.fnv1a_64
        BACKEND = "cython"

LABEL_BITS = _pure.LABEL_BITS

__all__ = ["BACKEND", "LABEL_BITS", "extract", "fnv1a_64"]
