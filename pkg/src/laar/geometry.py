"""Axis-aligned box arithmetic in continuous corner coordinates.

Boxes are ``[x1, y1, x2, y2]`` with ``x2 >= x1`` and ``y2 >= y1``. Area has no
``+1`` pixel term. Batched routines take ``(N, 4)`` float64 arrays.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"box coordinate {name}={v} is not finite")
            object.__setattr__(self, name, v)
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(
                f"malformed box [{self.x1}, {self.y1}, {self.x2}, {self.y2}]: negative extent"
            )

    @classmethod
    def from_xywh(cls, x, y, w, h):
        return cls(x, y, x + w, y + h)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def to_xywh(self):
        return [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)

    def shifted(self, dx, dy):
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scaled(self, s):
        if s <= 0:
            raise ValueError("scale must be positive")
        return Box(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def clipped(self, width, height):
        """Clip to ``[0, width] x [0, height]``; a box fully outside collapses to an edge."""
        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        return Box(x1, y1, x2, y2)


def area(b):
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a, b):
    """Intersection over union of two boxes; 0.0 when both are degenerate."""
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (area_a + area_b) - inter
    if union > 0.0:
        return inter / union
    return 0.0


def boxes_to_array(boxes):
    """Stack a sequence of ``Box`` (or 4-sequences) into an ``(N, 4)`` float64 array."""
    if isinstance(boxes, np.ndarray):
        return np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    rows = [b.as_tuple() if isinstance(b, Box) else tuple(b) for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def array_to_boxes(arr):
    return [Box(*row) for row in np.asarray(arr, dtype=np.float64).reshape(-1, 4).tolist()]


def iou_matrix(as_, bs):
    """Pairwise IoU; entry ``(i, j)`` equals ``iou(as_[i], bs[j])`` exactly."""
    return kernels.iou_matrix(boxes_to_array(as_), boxes_to_array(bs))


def iou_pairs(a, b):
    """Elementwise IoU of broadcastable ``(..., 4)`` arrays (same arithmetic as :func:`iou`)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (area_a + area_b) - inter
    out = np.zeros(np.broadcast(inter, union).shape)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def areas(arr):
    arr = boxes_to_array(arr)
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def encode_deltas(anchors, boxes):
    """Regression targets ``(dx, dy, dw, dh)`` of ``boxes`` relative to ``anchors``.

    Centre offsets are normalised by anchor size, sizes are log ratios. Both
    inputs must have positive width and height.
    """
    a = boxes_to_array(anchors)
    b = boxes_to_array(boxes)
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    bw, bh = b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]
    acx, acy = a[:, 0] + 0.5 * aw, a[:, 1] + 0.5 * ah
    bcx, bcy = b[:, 0] + 0.5 * bw, b[:, 1] + 0.5 * bh
    return np.stack([(bcx - acx) / aw, (bcy - acy) / ah, np.log(bw / aw), np.log(bh / ah)], axis=1)


def decode_deltas(anchors, deltas):
    """Inverse of :func:`encode_deltas`."""
    a = boxes_to_array(anchors)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    cx = a[:, 0] + 0.5 * aw + d[:, 0] * aw
    cy = a[:, 1] + 0.5 * ah + d[:, 1] * ah
    w = aw * np.exp(d[:, 2])
    h = ah * np.exp(d[:, 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
