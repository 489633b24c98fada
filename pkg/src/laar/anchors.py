"""Multi-level anchor grids and per-anchor AIoU targets."""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, boxes_to_array, iou_matrix

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1


@dataclass(frozen=True)
class AnchorLayout:
    """Anchor construction parameters.

    ``levels`` is a sequence of ``(stride, base_size)`` pairs with strictly
    increasing strides. ``aspect_ratios`` are height/width.
    """

    image_size: tuple
    levels: tuple
    scales: tuple = (1.0,)
    aspect_ratios: tuple = (1.0,)
    clip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "levels", tuple((float(s), float(b)) for s, b in self.levels))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        if not self.levels:
            raise ValueError("empty layout")
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ValueError(f"image_size must be two positive integers, got {self.image_size}")
        strides = [s for s, _ in self.levels]
        if any(s <= 0 for s in strides) or any(b <= 0 for _, b in self.levels):
            raise ValueError("strides and base sizes must be positive")
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {strides}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be a nonempty list of positive numbers")
        if not self.aspect_ratios or any(r <= 0 for r in self.aspect_ratios):
            raise ValueError("aspect_ratios must be a nonempty list of positive numbers")

    def grid_shape(self, level):
        stride = self.levels[level][0]
        w, h = self.image_size
        return math.ceil(h / stride), math.ceil(w / stride)

    @property
    def per_cell(self):
        return len(self.scales) * len(self.aspect_ratios)

    def count(self):
        return sum(r * c * self.per_cell for r, c in map(self.grid_shape, range(len(self.levels))))

    def to_dict(self):
        return {
            "image_size": list(self.image_size),
            "levels": [list(lv) for lv in self.levels],
            "scales": list(self.scales),
            "aspect_ratios": list(self.aspect_ratios),
            "clip": self.clip,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            image_size=d["image_size"],
            levels=d["levels"],
            scales=d.get("scales", (1.0,)),
            aspect_ratios=d.get("aspect_ratios", (1.0,)),
            clip=bool(d.get("clip", False)),
        )


@dataclass
class AnchorGrid:
    """Anchors in level-major, row-major, (scale x ratio) order.

    ``anchors`` is an ``(N, 4)`` array; ``level_offsets[k]`` is the id of the
    first anchor of level ``k``.
    """

    anchors: np.ndarray
    layout: AnchorLayout
    level_offsets: tuple = field(default=())

    def __len__(self):
        return len(self.anchors)

    def box(self, i):
        return Box(*self.anchors[i])

    def boxes(self):
        return [Box(*row) for row in self.anchors.tolist()]

    def cell_anchor_ids(self, cx, cy):
        """Ids of all anchors whose grid cell contains each point, one row per point.

        Points outside the image are snapped to the nearest border cell.
        Returns an ``(P, L * per_cell)`` int64 array.
        """
        cx = np.atleast_1d(np.asarray(cx, dtype=np.float64))
        cy = np.atleast_1d(np.asarray(cy, dtype=np.float64))
        per_cell = self.layout.per_cell
        cols = []
        for k, (stride, _) in enumerate(self.layout.levels):
            rows, ncols = self.layout.grid_shape(k)
            i = np.clip(np.floor(cx / stride), 0, ncols - 1).astype(np.int64)
            j = np.clip(np.floor(cy / stride), 0, rows - 1).astype(np.int64)
            first = self.level_offsets[k] + (j * ncols + i) * per_cell
            cols.append(first[:, None] + np.arange(per_cell, dtype=np.int64)[None, :])
        return np.concatenate(cols, axis=1)


def generate_anchors(layout):
    """Build the anchor grid for ``layout`` (deterministic, unclipped unless ``layout.clip``)."""
    w_img, h_img = layout.image_size
    shapes = []
    for s in layout.scales:
        for r in layout.aspect_ratios:
            shapes.append((s * math.sqrt(1.0 / r), s * math.sqrt(r)))
    shapes = np.asarray(shapes, dtype=np.float64)
    blocks = []
    offsets = []
    total = 0
    for k, (stride, base) in enumerate(layout.levels):
        rows, cols = layout.grid_shape(k)
        cx = (np.arange(cols, dtype=np.float64) + 0.5) * stride
        cy = (np.arange(rows, dtype=np.float64) + 0.5) * stride
        ccx, ccy = np.meshgrid(cx, cy)  # row-major: y outer, x inner
        ccx = ccx.reshape(-1, 1)
        ccy = ccy.reshape(-1, 1)
        half_w = 0.5 * base * shapes[:, 0][None, :]
        half_h = 0.5 * base * shapes[:, 1][None, :]
        level = np.stack([ccx - half_w, ccy - half_h, ccx + half_w, ccy + half_h], axis=-1)
        blocks.append(level.reshape(-1, 4))
        offsets.append(total)
        total += level.shape[0] * level.shape[1]
    anchors = np.ascontiguousarray(np.concatenate(blocks, axis=0))
    if layout.clip:
        anchors[:, 0::2] = np.clip(anchors[:, 0::2], 0.0, w_img)
        anchors[:, 1::2] = np.clip(anchors[:, 1::2], 0.0, h_img)
    return AnchorGrid(anchors=anchors, layout=layout, level_offsets=tuple(offsets))


@dataclass
class GroundTruth:
    box: Box
    class_id: int


@dataclass
class Scene:
    """One image's ground truth; boxes are clipped to the image on construction."""

    image_id: object
    image_size: tuple
    ground_truths: list = field(default_factory=list)

    def __post_init__(self):
        w, h = self.image_size
        self.image_size = (w, h)
        gts = []
        for gt in self.ground_truths:
            box, cls = (gt.box, gt.class_id) if isinstance(gt, GroundTruth) else gt
            if not isinstance(box, Box):
                box = Box(*box)
            if int(cls) < 0:
                raise ValueError(f"class_id must be >= 0, got {cls}")
            gts.append(GroundTruth(box.clipped(w, h), int(cls)))
        self.ground_truths = gts

    def gt_array(self):
        return boxes_to_array([g.box for g in self.ground_truths])

    def gt_classes(self):
        return np.asarray([g.class_id for g in self.ground_truths], dtype=np.int64)


@dataclass
class AnchorTargets:
    aiou: np.ndarray
    matched_gt: np.ndarray  # -1 when the scene has no ground truth
    assignment: np.ndarray  # POSITIVE / NEGATIVE / IGNORE

    def __eq__(self, other):
        return (
            isinstance(other, AnchorTargets)
            and np.array_equal(self.aiou, other.aiou)
            and np.array_equal(self.matched_gt, other.matched_gt)
            and np.array_equal(self.assignment, other.assignment)
        )


def compute_aiou_targets(grid, scene, pos_thr=0.5, neg_thr=0.4):
    """Max-IoU AIoU target, matched GT and assignment for every anchor.

    Ties between equally good GTs go to the lowest GT index.
    """
    if not 0.0 <= neg_thr <= pos_thr <= 1.0:
        raise ValueError(f"need 0 <= neg_thr <= pos_thr <= 1, got {neg_thr}, {pos_thr}")
    n = len(grid)
    gts = scene.gt_array()
    if len(gts) == 0:
        return AnchorTargets(
            aiou=np.zeros(n, dtype=np.float64),
            matched_gt=np.full(n, -1, dtype=np.int64),
            assignment=np.full(n, NEGATIVE, dtype=np.int8),
        )
    ious = iou_matrix(grid.anchors, gts)
    matched = np.argmax(ious, axis=1).astype(np.int64)
    aiou = ious[np.arange(n), matched]
    assignment = np.full(n, IGNORE, dtype=np.int8)
    assignment[aiou >= pos_thr] = POSITIVE
    assignment[aiou < neg_thr] = NEGATIVE
    return AnchorTargets(aiou=aiou, matched_gt=matched, assignment=assignment)
