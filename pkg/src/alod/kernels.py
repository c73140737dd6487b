"""Backend selection for the box kernels.

Prefers the compiled extension, falls back to the numpy implementations.
Both expose: iou_matrix, nms_keep, greedy_match.
"""

from __future__ import annotations

try:
    from alod import _kernels as _impl

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on the build environment
    from alod import _kernels_py as _impl

    BACKEND = "numpy"

iou_matrix = _impl.iou_matrix
nms_keep = _impl.nms_keep
greedy_match = _impl.greedy_match
