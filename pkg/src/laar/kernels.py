"""Kernel dispatch: the compiled extension when importable, else the fallback.

Set ``LAAR_PURE_PYTHON=1`` to force the fallback (useful for benchmarking and
for checking that both backends agree).
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("LAAR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback
    else:
        BACKEND = "cython"
else:
    _impl = _fallback

iou_matrix = _impl.iou_matrix
greedy_nms = _impl.greedy_nms
match_greedy = _impl.match_greedy

__all__ = ["BACKEND", "iou_matrix", "greedy_nms", "match_greedy"]
