"""Location-aware anchor-based box reasoning.

AIoU targets for anchors, calibrated quality scores, LAAR-NMS, COCO/VOC
average precision and a seeded detection simulator.
"""

from .anchors import AnchorGrid, AnchorLayout, AnchorTargets, Scene, compute_aiou_targets, generate_anchors
from .evaluation import EvalConfig, EvalReport, average_precision, evaluate, match_detections
from .geometry import Box, area, iou, iou_matrix
from .kernels import BACKEND
from .scoring import LossReport, LossWeights, Proposal, combined_loss, cqs, locscore_loss, smooth_l1_box_loss
from .simulation import SimConfig, SimOutput, run_comparison, simulate
from .suppression import Detection, NmsConfig, laar_nms, suppress_image

__version__ = "0.1.0"
