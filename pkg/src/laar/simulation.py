"""Seeded synthetic scenes and proposals with a tunable score/quality gap.

The classification score of a proposal blends its true IoU with its source
GT (weight ``score_alignment``) with uniform noise; the locscore is the AIoU
of the proposal's anchor plus Gaussian noise of ``locscore_noise_sigma``.
Sweeping those two dials reproduces, at desk scale, the regime in which
CQS ranking should beat confidence ranking.

Randomness: numpy ``PCG64`` seeded through ``SeedSequence(seed)``; image
``k`` draws from the ``k``-th spawned child stream, so images can be
generated independently. Within an image the draw order is fixed (see
``_simulate_image``) and does not depend on any sigma, so runs that differ
only in ``locscore_noise_sigma`` share every other random quantity.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .anchors import AnchorLayout, Scene, compute_aiou_targets, generate_anchors
from .evaluation import EvalConfig, evaluate
from .geometry import Box, iou_matrix, iou_pairs
from .scoring import Proposal
from .suppression import Detection, NmsConfig, suppress_arrays

SCORE_NOISE_SIGMA = 0.05

JITTERED_GT = "jittered_gt"
BACKGROUND = "background"


def default_layout(image_size=(320, 320)):
    """Four-level grid used by the simulator unless another one is given."""
    return AnchorLayout(
        image_size=image_size,
        levels=((8, 32), (16, 64), (32, 128), (64, 256)),
        scales=(1.0, 2 ** 0.5),
        aspect_ratios=(0.5, 1.0, 2.0),
    )


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    images: int = 100
    classes: int = 3
    gts_per_image: tuple = (1, 6)
    image_size: tuple = (320, 320)
    box_scale_range: tuple = (24.0, 160.0)
    jitter_sigma: float = 0.15
    score_alignment: float = 0.3
    locscore_noise_sigma: float = 0.05
    proposals_per_gt: int = 8
    background_fp_rate: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "gts_per_image", tuple(int(v) for v in self.gts_per_image))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "box_scale_range", tuple(float(v) for v in self.box_scale_range))
        lo, hi = self.gts_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"gts_per_image must be a nonempty range, got {self.gts_per_image}")
        s_lo, s_hi = self.box_scale_range
        if not 0 < s_lo <= s_hi <= min(self.image_size):
            raise ValueError(f"box_scale_range must be within (0, min(image_size)], got {self.box_scale_range}")
        if not 0.0 <= self.score_alignment <= 1.0:
            raise ValueError("score_alignment must lie in [0, 1]")
        if self.images < 0 or self.classes < 1 or self.proposals_per_gt < 0:
            raise ValueError("images >= 0, classes >= 1 and proposals_per_gt >= 0 required")
        if self.jitter_sigma < 0 or self.locscore_noise_sigma < 0 or self.background_fp_rate < 0:
            raise ValueError("sigmas and background_fp_rate must be nonnegative")

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown simulation settings: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return SimConfig(**d)


@dataclass
class ImageSample:
    """Simulated proposals of one image in array form."""

    scene: Scene
    boxes: np.ndarray  # (P, 4)
    scores: np.ndarray  # (P, C)
    locscores: np.ndarray  # (P,)
    anchor_ids: np.ndarray
    true_iou: np.ndarray
    true_aiou: np.ndarray
    matched_gt: np.ndarray  # -1 when the image has no GT
    sources: list


@dataclass
class SimOutput:
    samples: list = field(default_factory=list)

    @property
    def scenes(self):
        return [s.scene for s in self.samples]

    @property
    def proposals(self):
        out = []
        for s in self.samples:
            for i in range(len(s.boxes)):
                out.append(Proposal(Box(*s.boxes[i]), s.scores[i].tolist(), float(s.locscores[i]),
                                    int(s.anchor_ids[i]), s.scene.image_id))
        return out

    @property
    def provenance(self):
        out = []
        for s in self.samples:
            for i in range(len(s.boxes)):
                out.append({
                    "true_iou_with_gt": float(s.true_iou[i]),
                    "true_aiou": float(s.true_aiou[i]),
                    "matched_gt": int(s.matched_gt[i]),
                    "source": s.sources[i],
                })
        return out


def _snap_to_anchor(grid, boxes):
    """Highest-IoU anchor among those whose cell contains each box centre (ties: lowest id)."""
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    cx = 0.5 * (boxes[:, 0] + boxes[:, 2])
    cy = 0.5 * (boxes[:, 1] + boxes[:, 3])
    cand = grid.cell_anchor_ids(cx, cy)
    cand.sort(axis=1)
    ious = iou_pairs(boxes[:, None, :], grid.anchors[cand])
    return cand[np.arange(len(boxes)), np.argmax(ious, axis=1)]


def _jitter(rng, gt, n, sigma):
    """``n`` copies of ``gt`` perturbed in (cx, cy, log w, log h) space."""
    z = rng.standard_normal((n, 4))
    w, h = gt[2] - gt[0], gt[3] - gt[1]
    cx = 0.5 * (gt[0] + gt[2]) + sigma * w * z[:, 0]
    cy = 0.5 * (gt[1] + gt[3]) + sigma * h * z[:, 1]
    nw = w * np.exp(sigma * z[:, 2])
    nh = h * np.exp(sigma * z[:, 3])
    if sigma == 0.0:
        return np.repeat(gt[None, :], n, axis=0)
    return np.stack([cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh], axis=1)


def _simulate_image(cfg, grid, image_id, rng):
    W, H = cfg.image_size
    s_lo, s_hi = cfg.box_scale_range
    n_gt = int(rng.integers(cfg.gts_per_image[0], cfg.gts_per_image[1] + 1))
    gt_cls = rng.integers(0, cfg.classes, size=n_gt)
    wh = rng.uniform(s_lo, s_hi, size=(n_gt, 2))
    u = rng.uniform(0.0, 1.0, size=(n_gt, 2))
    x1 = u[:, 0] * (W - wh[:, 0])
    y1 = u[:, 1] * (H - wh[:, 1])
    gts = np.stack([x1, y1, x1 + wh[:, 0], y1 + wh[:, 1]], axis=1)
    scene = Scene(image_id, (W, H), [(Box(*g), int(c)) for g, c in zip(gts.tolist(), gt_cls.tolist())])
    gts = scene.gt_array()

    boxes, cls, src_gt = [], [], []
    for g in range(n_gt):
        jb = _jitter(rng, gts[g], cfg.proposals_per_gt, cfg.jitter_sigma)
        boxes.append(np.clip(jb, 0.0, [W, H, W, H]))
        cls.append(np.full(cfg.proposals_per_gt, gt_cls[g]))
        src_gt.append(np.full(cfg.proposals_per_gt, g))
    n_bg = int(rng.poisson(cfg.background_fp_rate))
    bwh = rng.uniform(s_lo, s_hi, size=(n_bg, 2))
    bu = rng.uniform(0.0, 1.0, size=(n_bg, 2))
    bx1 = bu[:, 0] * (W - bwh[:, 0])
    by1 = bu[:, 1] * (H - bwh[:, 1])
    boxes.append(np.stack([bx1, by1, bx1 + bwh[:, 0], by1 + bwh[:, 1]], axis=1).reshape(-1, 4))
    cls.append(rng.integers(0, cfg.classes, size=n_bg))
    src_gt.append(np.full(n_bg, -1))

    boxes = np.ascontiguousarray(np.concatenate(boxes, axis=0), dtype=np.float64)
    cls = np.concatenate(cls).astype(np.int64)
    src_gt = np.concatenate(src_gt).astype(np.int64)
    n = len(boxes)
    is_bg = src_gt < 0

    ious = iou_matrix(boxes, gts) if n_gt else np.zeros((n, 0))
    matched = src_gt.copy()
    if n_gt:
        matched[is_bg] = np.argmax(ious[is_bg], axis=1)
    true_iou = np.zeros(n)
    if n_gt:
        true_iou = ious[np.arange(n), np.maximum(matched, 0)]
        true_iou[matched < 0] = 0.0

    anchor_ids = _snap_to_anchor(grid, boxes)
    targets = compute_aiou_targets(grid, scene)
    true_aiou = targets.aiou[anchor_ids]

    # fixed draw order: uniform mix, score noise, locscore noise
    mix = rng.uniform(0.0, 1.0, size=n)
    score_noise = rng.standard_normal(n)
    loc_noise = rng.standard_normal(n)
    a = cfg.score_alignment
    # the noise floor shrinks with the alignment so that a=1 is noise-free
    p_c = np.clip(a * true_iou + (1.0 - a) * (mix + SCORE_NOISE_SIGMA * score_noise), 0.0, 1.0)
    scores = np.zeros((n, cfg.classes))
    scores[np.arange(n), cls] = p_c
    locscores = np.clip(true_aiou + cfg.locscore_noise_sigma * loc_noise, 0.0, 1.0)
    sources = [BACKGROUND if b else JITTERED_GT for b in is_bg.tolist()]
    return ImageSample(scene, boxes, scores, locscores, anchor_ids, true_iou, true_aiou, matched, sources)


def simulate(cfg, grid=None):
    """Generate ``cfg.images`` scenes with their proposals."""
    if grid is None:
        grid = generate_anchors(default_layout(cfg.image_size))
    gw, gh = grid.layout.image_size
    if gw < cfg.image_size[0] or gh < cfg.image_size[1]:
        raise ValueError(f"anchor grid {grid.layout.image_size} does not cover image {cfg.image_size}")
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.images)
    samples = [
        _simulate_image(cfg, grid, k, np.random.Generator(np.random.PCG64(ss)))
        for k, ss in enumerate(children)
    ]
    return SimOutput(samples)


def detect(sim, nms_cfg):
    """Run suppression on every simulated image; detections in image order."""
    dets = []
    for s in sim.samples:
        idx, cls, conf, cq = suppress_arrays(s.boxes, s.scores, s.locscores, nms_cfg)
        for i, c, cf, q in zip(idx.tolist(), cls.tolist(), conf.tolist(), cq.tolist()):
            dets.append(Detection(Box(*s.boxes[i]), c, cf, q, s.scene.image_id))
    return dets


@dataclass
class ComparisonRow:
    mode: str
    nms: NmsConfig
    report: object
    delta: dict

    @property
    def delta_ap(self):
        return self.delta["ap_mean"]


def _delta(report, base):
    out = {}
    for k in report.METRICS:
        a, b = getattr(report, k), getattr(base, k)
        out[k] = None if a is None or b is None else a - b
    return out


def run_comparison(cfg, nms_modes, eval_cfg=None, grid=None, sim=None):
    """Evaluate several NMS configurations on one shared simulation.

    Deltas are taken against the first ``baseline`` mode in the list, or the
    first mode when none is a baseline.
    """
    if not nms_modes:
        raise ValueError("need at least one NMS mode")
    eval_cfg = eval_cfg or EvalConfig()
    sim = sim if sim is not None else simulate(cfg, grid)
    scenes = sim.scenes
    reports = [evaluate(detect(sim, m), scenes, eval_cfg, keep_curves=False) for m in nms_modes]
    ref = next((i for i, m in enumerate(nms_modes) if m.mode == "baseline"), 0)
    return [
        ComparisonRow(m.mode, m, r, _delta(r, reports[ref]))
        for m, r in zip(nms_modes, reports)
    ]


def delta_ap_experiment(cfg, seeds, sigmas, eval_cfg=None, epsilon=0.5, top_k=100, grid=None):
    """Mean ΔAP(laar_cluster - baseline) per locscore noise level over ``seeds``.

    Returns ``{sigma: [delta per seed]}``.
    """
    grid = grid or generate_anchors(default_layout(cfg.image_size))
    modes = [NmsConfig(epsilon=epsilon, mode="baseline", top_k=top_k),
             NmsConfig(epsilon=epsilon, mode="laar_cluster", top_k=top_k)]
    out = {s: [] for s in sigmas}
    for seed in seeds:
        for sigma in sigmas:
            rows = run_comparison(cfg.replace(seed=seed, locscore_noise_sigma=sigma), modes, eval_cfg, grid)
            out[sigma].append(rows[1].delta_ap)
    return out
