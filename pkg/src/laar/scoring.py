"""Calibrated quality score and the three-term detection loss.

Losses return ``(value, grad)`` with analytic gradients so they can be
checked against finite differences without an autodiff framework.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box

BCE_EPS = 1e-7
LOCSCORE_KINDS = ("bce", "smooth_l1")
REDUCTIONS = ("mean_all", "mean_positive", "sum")


@dataclass
class Proposal:
    """A candidate detection regressed from one anchor."""

    box: Box
    class_scores: tuple
    locscore: float
    anchor_id: int = -1
    image_id: object = 0

    def __post_init__(self):
        if not isinstance(self.box, Box):
            self.box = Box(*self.box)
        self.class_scores = tuple(min(max(float(s), 0.0), 1.0) for s in self.class_scores)
        self.locscore = min(max(float(self.locscore), 0.0), 1.0)
        self.anchor_id = int(self.anchor_id)

    @property
    def num_classes(self):
        return len(self.class_scores)

    def score(self, class_id):
        return self.class_scores[class_id] if 0 <= class_id < len(self.class_scores) else 0.0


@dataclass(frozen=True)
class LossWeights:
    lambda_cl: float = 1.0
    lambda_bb: float = 1.0
    lambda_lc: float = 1.0

    def __post_init__(self):
        if min(self.lambda_cl, self.lambda_bb, self.lambda_lc) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossReport:
    l_cl: float
    l_bb: float
    l_lc: float
    l_total: float
    weights: LossWeights = field(default_factory=LossWeights)
    gradients: dict = field(default_factory=dict)


def cqs(p_c, p_lc):
    """Calibrated quality score: classification confidence times locscore."""
    return p_c * p_lc


def _smooth_l1(d):
    ad = abs(d)
    if ad < 1.0:
        return 0.5 * d * d, d
    return ad - 0.5, math.copysign(1.0, d)


def locscore_loss(pred, target, kind="bce"):
    """Loss of a predicted locscore against its AIoU target; returns ``(value, d value / d pred)``."""
    if kind == "bce":
        p = min(max(float(pred), BCE_EPS), 1.0 - BCE_EPS)
        t = float(target)
        value = -t * math.log(p) - (1.0 - t) * math.log(1.0 - p)
        grad = (p - t) / (p * (1.0 - p))
        return value, grad
    if kind == "smooth_l1":
        return _smooth_l1(float(pred) - float(target))
    raise ValueError(f"unknown locscore loss kind {kind!r}; expected one of {LOCSCORE_KINDS}")


def locscore_loss_batch(preds, targets, kind="bce", reduction="mean_all", positive=None):
    """Vectorised locscore loss with a reduction over anchors.

    ``reduction`` is ``mean_all`` (average over every anchor), ``mean_positive``
    (sum normalised by the number of positive anchors, at least 1) or ``sum``.
    Returns ``(value, grad)`` where ``grad`` has the shape of ``preds``.
    """
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if kind == "bce":
        pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
        values = -t * np.log(pc) - (1.0 - t) * np.log(1.0 - pc)
        grads = (pc - t) / (pc * (1.0 - pc))
    elif kind == "smooth_l1":
        d = p - t
        ad = np.abs(d)
        values = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
        grads = np.clip(d, -1.0, 1.0)
    else:
        raise ValueError(f"unknown locscore loss kind {kind!r}; expected one of {LOCSCORE_KINDS}")
    if reduction == "sum":
        norm = 1.0
    elif reduction == "mean_all":
        norm = float(max(values.size, 1))
    elif reduction == "mean_positive":
        if positive is None:
            raise ValueError("mean_positive reduction needs a positive mask")
        norm = float(max(int(np.count_nonzero(positive)), 1))
    else:
        raise ValueError(f"unknown reduction {reduction!r}; expected one of {REDUCTIONS}")
    return math.fsum(values.ravel().tolist()) / norm, grads / norm


def smooth_l1_box_loss(pred_deltas, target_deltas):
    """Summed smooth-L1 (beta=1) over four box deltas; returns ``(value, grad)``."""
    pred = np.asarray(pred_deltas, dtype=np.float64).reshape(4)
    target = np.asarray(target_deltas, dtype=np.float64).reshape(4)
    value = 0.0
    grad = np.zeros(4)
    for k in range(4):
        v, g = _smooth_l1(pred[k] - target[k])
        value += v
        grad[k] = g
    return value, grad


def combined_loss(l_cl, l_bb, l_lc, w=None, gradients=None):
    """Weighted total ``lambda_cl*l_cl + lambda_bb*l_bb + lambda_lc*l_lc``."""
    w = w or LossWeights()
    terms = {"l_cl": l_cl, "l_bb": l_bb, "l_lc": l_lc}
    for name, v in terms.items():
        if not math.isfinite(v):
            raise ValueError(f"loss component {name} is not finite")
        if v < 0:
            raise ValueError(f"negative loss component {name}={v}")
    total = w.lambda_cl * l_cl + w.lambda_bb * l_bb + w.lambda_lc * l_lc
    return LossReport(l_cl, l_bb, l_lc, total, w, dict(gradients or {}))
