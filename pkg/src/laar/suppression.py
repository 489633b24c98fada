"""Greedy NMS ranked by classification confidence or by CQS (LAAR-NMS).

Three modes:

``baseline``
    rank by classification confidence ``P_c``.
``laar``
    rank by ``P_c * P_lc``; report the pick's own ``P_c``.
``laar_cluster``
    as ``laar``, but the reported confidence is the max ``P_c`` over the pick
    and every box it suppressed.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import Box, boxes_to_array

MODES = ("baseline", "laar", "laar_cluster")


def normalize_mode(mode):
    m = str(mode).replace("-", "_").lower()
    if m not in MODES:
        raise ValueError(f"unknown NMS mode {mode!r}; expected one of {MODES}")
    return m


@dataclass(frozen=True)
class NmsConfig:
    epsilon: float = 0.5
    mode: str = "laar_cluster"
    top_k: int = 100
    per_class: bool = True
    score_floor: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if int(self.top_k) < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.score_floor < 0:
            raise ValueError("score_floor must be >= 0")

    @property
    def name(self):
        return self.mode

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "mode": self.mode,
            "top_k": int(self.top_k),
            "per_class": self.per_class,
            "score_floor": self.score_floor,
        }

    @classmethod
    def from_dict(cls, d):
        base = cls()
        return cls(
            epsilon=float(d.get("epsilon", base.epsilon)),
            mode=d.get("mode", base.mode),
            top_k=int(d.get("top_k", base.top_k)),
            per_class=bool(d.get("per_class", base.per_class)),
            score_floor=float(d.get("score_floor", base.score_floor)),
        )


@dataclass
class Detection:
    box: Box
    class_id: int
    confidence: float
    cqs: float
    image_id: object = 0


def _run(boxes, p_c, p_lc, epsilon, mode):
    if mode == "baseline":
        rank = p_c
    else:
        rank = p_c * p_lc
    keep, reported = kernels.greedy_nms(boxes, rank, p_c, epsilon, mode == "laar_cluster")
    return keep, reported, rank[keep]


def laar_nms(proposals, class_id, cfg=None):
    """Suppress ``proposals`` for one class; detections come out in selection order."""
    cfg = cfg or NmsConfig()
    if not proposals:
        return []
    boxes = boxes_to_array([p.box for p in proposals])
    p_c = np.asarray([p.score(class_id) for p in proposals], dtype=np.float64)
    p_lc = np.asarray([p.locscore for p in proposals], dtype=np.float64)
    keep, reported, ranks = _run(boxes, p_c, p_lc, cfg.epsilon, cfg.mode)
    return [
        Detection(proposals[i].box, class_id, float(c), float(s), proposals[i].image_id)
        for i, c, s in zip(keep.tolist(), reported.tolist(), ranks.tolist())
    ]


def suppress_arrays(boxes, scores, locscores, cfg):
    """Array form of :func:`suppress_image`.

    ``scores`` is ``(N, C)``. Returns ``(index, class_id, confidence, cqs)``
    arrays of the surviving detections, sorted by confidence and truncated to
    ``top_k``. ``index`` refers to rows of the inputs.
    """
    boxes = boxes_to_array(boxes)
    scores = np.asarray(scores, dtype=np.float64).reshape(len(boxes), -1)
    locscores = np.asarray(locscores, dtype=np.float64)
    out_idx, out_cls, out_conf, out_cqs = [], [], [], []
    if cfg.per_class:
        for c in range(scores.shape[1]):
            sel = np.flatnonzero(scores[:, c] >= cfg.score_floor)
            if sel.size == 0:
                continue
            keep, reported, ranks = _run(boxes[sel], scores[sel, c], locscores[sel], cfg.epsilon, cfg.mode)
            out_idx.append(sel[keep])
            out_cls.append(np.full(keep.size, c, dtype=np.int64))
            out_conf.append(reported)
            out_cqs.append(ranks)
    elif scores.shape[1]:
        labels = np.argmax(scores, axis=1)
        best = scores[np.arange(len(scores)), labels]
        sel = np.flatnonzero(best >= cfg.score_floor)
        if sel.size:
            keep, reported, ranks = _run(boxes[sel], best[sel], locscores[sel], cfg.epsilon, cfg.mode)
            out_idx.append(sel[keep])
            out_cls.append(labels[sel][keep].astype(np.int64))
            out_conf.append(reported)
            out_cqs.append(ranks)
    if not out_idx:
        empty = np.zeros(0)
        return empty.astype(np.int64), empty.astype(np.int64), empty, empty
    idx = np.concatenate(out_idx)
    cls = np.concatenate(out_cls)
    conf = np.concatenate(out_conf)
    cq = np.concatenate(out_cqs)
    order = np.argsort(-conf, kind="stable")[: int(cfg.top_k)]
    return idx[order], cls[order], conf[order], cq[order]


def suppress_image(proposals, cfg=None):
    """Per-class suppression for one image, merged, sorted by confidence, cut to ``top_k``.

    Proposals whose score for a class is below ``cfg.score_floor`` do not
    compete for that class (set the floor to 0 to disable).
    """
    cfg = cfg or NmsConfig()
    if not proposals:
        return []
    n_cls = max(p.num_classes for p in proposals)
    scores = np.zeros((len(proposals), n_cls))
    for i, p in enumerate(proposals):
        scores[i, : p.num_classes] = p.class_scores
    idx, cls, conf, cq = suppress_arrays(
        [p.box for p in proposals], scores, [p.locscore for p in proposals], cfg
    )
    return [
        Detection(proposals[i].box, c, cf, s, proposals[i].image_id)
        for i, c, cf, s in zip(idx.tolist(), cls.tolist(), conf.tolist(), cq.tolist())
    ]
