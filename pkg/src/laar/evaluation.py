"""COCO- and VOC-style average precision for box detections.

Matching is greedy by confidence: every detection takes the unmatched GT of
the same class with the highest IoU at or above the threshold. Size-bucket
APs follow COCO: GTs outside the bucket are ignored, detections matched to
them are ignored, and unmatched detections outside the bucket are ignored.
Crowd regions are not modelled.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import areas, boxes_to_array

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
INTERPOLATIONS = ("all_point", "points_101", "points_11")
COCO_AREAS = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, math.inf),
}


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = COCO_THRESHOLDS
    interpolation: str = "points_101"
    max_dets_per_image: int = 100
    size_buckets: bool = True

    def __post_init__(self):
        thr = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", thr)
        if not thr:
            raise ValueError("need at least one IoU threshold")
        if any(not 0.0 < t <= 1.0 for t in thr) or any(b <= a for a, b in zip(thr, thr[1:])):
            raise ValueError(f"IoU thresholds must be strictly increasing within (0, 1], got {thr}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}; expected one of {INTERPOLATIONS}")
        if int(self.max_dets_per_image) < 1:
            raise ValueError("max_dets_per_image must be >= 1")

    @classmethod
    def coco(cls, **kw):
        return cls(**kw)

    @classmethod
    def voc(cls, interpolation="all_point", **kw):
        return cls(iou_thresholds=(0.5,), interpolation=interpolation, size_buckets=False, **kw)

    def to_dict(self):
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "interpolation": self.interpolation,
            "max_dets_per_image": int(self.max_dets_per_image),
            "size_buckets": self.size_buckets,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        protocol = d.pop("protocol", "coco")
        base = cls.voc() if protocol == "voc" else cls.coco()
        return cls(
            iou_thresholds=tuple(d.get("iou_thresholds", base.iou_thresholds)),
            interpolation=d.get("interpolation", base.interpolation),
            max_dets_per_image=int(d.get("max_dets_per_image", base.max_dets_per_image)),
            size_buckets=bool(d.get("size_buckets", base.size_buckets)),
        )


@dataclass
class EvalReport:
    """AP family metrics. Metrics that cannot be defined (no GT in scope,
    threshold not evaluated) are ``None``."""

    ap_mean: float
    ap_50: float
    ap_75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    per_class_ap: dict = field(default_factory=dict)
    ap_by_threshold: dict = field(default_factory=dict)
    pr_curves: dict = field(default_factory=dict)
    n_gt: dict = field(default_factory=dict)

    METRICS = ("ap_mean", "ap_50", "ap_75", "ap_small", "ap_medium", "ap_large")

    def metrics(self):
        return {k: getattr(self, k) for k in self.METRICS}

    def to_dict(self, include_curves=False):
        out = {
            "metrics": self.metrics(),
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "ap_by_threshold": {f"{k:g}": v for k, v in sorted(self.ap_by_threshold.items())},
            "n_gt": dict(self.n_gt),
        }
        if include_curves:
            out["pr_curves"] = [
                {"class_id": c, "iou_threshold": t, "recall": [r for r, _ in pts], "precision": [p for _, p in pts]}
                for (c, t), pts in sorted(self.pr_curves.items())
            ]
        return out


def _sorted_order(confidences):
    """Indices by confidence descending, ties by input index."""
    conf = np.asarray(confidences, dtype=np.float64)
    return np.lexsort((np.arange(conf.size), -conf))


def _precision_recall(tp_sorted, n_gt):
    tp = np.cumsum(tp_sorted, dtype=np.int64)
    fp = np.cumsum(~tp_sorted, dtype=np.int64)
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / float(n_gt)
    return recall, precision


def _ap_sorted(tp_sorted, n_gt, interpolation):
    tp_sorted = np.asarray(tp_sorted, dtype=bool)
    if n_gt <= 0:
        raise ValueError("undefined AP: no ground truth")
    if tp_sorted.size == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    recall, precision = _precision_recall(tp_sorted, n_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "all_point":
        # recall steps by exactly 1/n_gt at every true positive
        ap = math.fsum(envelope[tp_sorted].tolist()) / n_gt
    elif interpolation in ("points_101", "points_11"):
        n_pts = 101 if interpolation == "points_101" else 11
        # k / (n - 1) exactly; linspace drifts (0.30000000000000004) and flips ties
        levels = np.arange(n_pts) / (n_pts - 1)
        idx = np.searchsorted(recall, levels, side="left")
        sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
        ap = math.fsum(sampled.tolist()) / n_pts
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return ap, recall, precision


def average_precision(flags, confidences, n_gt, interpolation="all_point"):
    """AP from tp/fp flags; detections are ranked by confidence (ties by index)."""
    flags = np.asarray(flags, dtype=bool)
    order = _sorted_order(confidences)
    return _ap_sorted(flags[order], n_gt, interpolation)[0]


def _group(dets):
    """``{(image_id, class_id): [input indices]}`` in input order."""
    groups = {}
    for i, d in enumerate(dets):
        groups.setdefault((d.image_id, d.class_id), []).append(i)
    return groups


def match_detections(dets, scene, iou_thr):
    """True-positive flags (aligned with ``dets``) for one scene at one threshold."""
    flags = np.zeros(len(dets), dtype=bool)
    gt_boxes = scene.gt_array()
    gt_cls = scene.gt_classes()
    by_class = {}
    for i, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append(i)
    for c, idx in by_class.items():
        gsel = np.flatnonzero(gt_cls == c)
        if gsel.size == 0:
            continue
        idx = np.asarray(idx)
        idx = idx[_sorted_order([dets[i].confidence for i in idx])]
        ious = kernels.iou_matrix(boxes_to_array([dets[i].box for i in idx]), gt_boxes[gsel])
        state = kernels.match_greedy(
            ious, np.asarray([iou_thr]), np.zeros(gsel.size, bool), np.zeros(idx.size, bool)
        )
        flags[idx] = state[0] == 1
    return flags.tolist()


def _mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return math.fsum(values) / len(values)


def evaluate(dets, scenes, cfg=None, keep_curves=True):
    """AP metrics of ``dets`` against ``scenes``."""
    cfg = cfg or EvalConfig()
    by_id = {s.image_id: s for s in scenes}
    unknown = sorted({d.image_id for d in dets if d.image_id not in by_id}, key=str)
    if unknown:
        raise ValueError(f"detections reference unknown image ids: {unknown}")

    thresholds = np.asarray(cfg.iou_thresholds, dtype=np.float64)
    buckets = dict(COCO_AREAS) if cfg.size_buckets else {"all": COCO_AREAS["all"]}

    # per-image cap by confidence, ties by input index
    per_image = {}
    for i, d in enumerate(dets):
        per_image.setdefault(d.image_id, []).append(i)
    kept = []
    for image_id, idx in per_image.items():
        order = _sorted_order([dets[i].confidence for i in idx])
        kept.extend(idx[j] for j in order[: int(cfg.max_dets_per_image)])
    kept.sort()

    classes = sorted({g.class_id for s in scenes for g in s.ground_truths})
    groups = _group([dets[i] for i in kept])
    kept = np.asarray(kept, dtype=np.int64)

    # per (bucket, class): confidences, input index, and state rows
    cells = {(b, c): ([], [], []) for b in buckets for c in classes}
    n_gt = {(b, c): 0 for b in buckets for c in classes}
    for scene in scenes:
        gt_boxes = scene.gt_array()
        gt_cls = scene.gt_classes()
        gt_area = areas(gt_boxes)
        for c in classes:
            gsel = np.flatnonzero(gt_cls == c)
            local = groups.get((scene.image_id, c), [])
            didx = kept[local] if local else np.zeros(0, dtype=np.int64)
            conf = np.asarray([dets[i].confidence for i in didx], dtype=np.float64)
            order = _sorted_order(conf)
            didx, conf = didx[order], conf[order]
            dboxes = boxes_to_array([dets[i].box for i in didx])
            darea = areas(dboxes)
            ious = kernels.iou_matrix(dboxes, gt_boxes[gsel])
            for b, (lo, hi) in buckets.items():
                g_ign = (gt_area[gsel] < lo) | (gt_area[gsel] > hi)
                n_gt[(b, c)] += int(np.count_nonzero(~g_ign))
                if didx.size == 0:
                    continue
                d_ign = (darea < lo) | (darea > hi)
                state = kernels.match_greedy(ious, thresholds, g_ign, d_ign)
                confs, inputs, states = cells[(b, c)]
                confs.append(conf)
                inputs.append(didx)
                states.append(state)

    ap = {}
    curves = {}
    for (b, c), (confs, inputs, states) in cells.items():
        if n_gt[(b, c)] == 0:
            continue
        if confs:
            conf = np.concatenate(confs)
            inp = np.concatenate(inputs)
            state = np.concatenate(states, axis=1)
            order = np.lexsort((inp, -conf))
            state = state[:, order]
        else:
            state = np.zeros((thresholds.size, 0), dtype=np.int8)
        for t, thr in enumerate(cfg.iou_thresholds):
            row = state[t]
            tp_sorted = row[row >= 0] == 1
            value, recall, precision = _ap_sorted(tp_sorted, n_gt[(b, c)], cfg.interpolation)
            ap[(b, c, thr)] = value
            if keep_curves and b == "all":
                curves[(c, thr)] = list(zip(recall.tolist(), precision.tolist()))

    def pick(bucket=None, thr=None, cls=None):
        return _mean(
            v for (b, c, t), v in ap.items()
            if (bucket is None or b == bucket) and (thr is None or t == thr) and (cls is None or c == cls)
        )

    thr_set = set(cfg.iou_thresholds)
    report = EvalReport(
        ap_mean=pick("all"),
        ap_50=pick("all", thr=0.5) if 0.5 in thr_set else None,
        ap_75=pick("all", thr=0.75) if 0.75 in thr_set else None,
        ap_small=pick("small") if "small" in buckets else None,
        ap_medium=pick("medium") if "medium" in buckets else None,
        ap_large=pick("large") if "large" in buckets else None,
        per_class_ap={c: pick("all", cls=c) for c in classes if n_gt[("all", c)] > 0},
        ap_by_threshold={t: pick("all", thr=t) for t in cfg.iou_thresholds},
        pr_curves=curves,
        n_gt={b: sum(n_gt[(b, c)] for c in classes) for b in buckets},
    )
    return report
