"""Pure-Python/numpy versions of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and bit-identical results. The arithmetic order of the IoU formula is fixed:

    inter = max(0, min(x2) - max(x1)) * max(0, min(y2) - max(y1))
    union = (area_a + area_b) - inter
    iou   = inter / union   (0 when union <= 0)
"""

import numpy as np


def iou_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (area_a[:, None] + area_b[None, :]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def _iou_one_to_many(box, others):
    area_a = (box[2] - box[0]) * (box[3] - box[1])
    area_b = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (area_a + area_b) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def greedy_nms(boxes, rank, conf, epsilon, cluster):
    """Greedy suppression ranked by ``rank``; returns (keep, reported_conf).

    ``keep`` lists input indices in selection order. A box is suppressed when
    its IoU with the current pick is strictly greater than ``epsilon``. With
    ``cluster`` the pick's reported confidence is raised to the max ``conf``
    over the boxes it suppresses.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    rank = np.ascontiguousarray(rank, dtype=np.float64)
    conf = np.ascontiguousarray(conf, dtype=np.float64)
    order = np.argsort(-rank, kind="stable")
    keep = []
    reported = []
    while order.size:
        m = order[0]
        rest = order[1:]
        ious = _iou_one_to_many(boxes[m], boxes[rest])
        hit = ious > epsilon
        p_m = conf[m]
        if cluster and hit.any():
            p_m = max(p_m, float(conf[rest[hit]].max()))
        keep.append(int(m))
        reported.append(float(p_m))
        order = rest[~hit]
    return np.asarray(keep, dtype=np.int64), np.asarray(reported, dtype=np.float64)


def match_greedy(ious, thresholds, gt_ignore, det_ignore):
    """Greedy detection-to-GT matching for every IoU threshold.

    Detections must already be sorted by confidence, descending. Returns an
    int8 array of shape (T, D): 1 true positive, 0 false positive, -1 ignored.
    A detection first takes the unmatched non-ignored GT of highest IoU
    (>= threshold, ties to the lowest GT index); failing that, an unmatched
    ignored GT, in which case the detection itself is ignored. Unmatched
    detections flagged in ``det_ignore`` are ignored rather than counted.
    """
    ious = np.asarray(ious, dtype=np.float64)
    n_det, n_gt = ious.shape
    thresholds = np.asarray(thresholds, dtype=np.float64)
    gt_ignore = np.asarray(gt_ignore, dtype=bool)
    det_ignore = np.asarray(det_ignore, dtype=bool)
    state = np.zeros((thresholds.size, n_det), dtype=np.int8)
    for t, thr in enumerate(thresholds):
        taken = [False] * n_gt
        for d in range(n_det):
            row = ious[d]
            best = -1
            best_iou = -1.0
            for pass_ignored in (False, True):
                for g in range(n_gt):
                    if taken[g] or bool(gt_ignore[g]) != pass_ignored:
                        continue
                    v = row[g]
                    if v >= thr and v > best_iou:
                        best, best_iou = g, v
                if best >= 0:
                    break
            if best >= 0:
                taken[best] = True
                state[t, d] = -1 if gt_ignore[best] else 1
            elif det_ignore[d]:
                state[t, d] = -1
    return state
