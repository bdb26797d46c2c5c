"""Kernel dispatch: compiled extension when built, NumPy otherwise.

Set ``SPATIAL_FSOD_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("SPATIAL_FSOD_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

row_normalize = _impl.row_normalize
row_normalize_backward = _impl.row_normalize_backward
iou_matrix = _impl.iou_matrix
nms = _impl.nms
greedy_match = _impl.greedy_match
