"""Exit criteria. Each test prints one PASS/FAIL line in the pytest summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import hashlib
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from laar.anchors import AnchorLayout, Scene, compute_aiou_targets, generate_anchors
from laar.evaluation import EvalConfig, average_precision, evaluate
from laar.geometry import Box, iou
from laar.scoring import Proposal, combined_loss, locscore_loss, smooth_l1_box_loss
from laar.simulation import SimConfig, delta_ap_experiment
from laar.suppression import Detection, NmsConfig, laar_nms, suppress_image
from oracles import AREAS, central_difference, naive_evaluate, plain_iou, raster_iou_batch


def rel_close(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b))


@pytest.mark.acceptance
def test_criterion_1_iou_oracle():
    """Criterion 1: IoU matches raster cell counting on 1e4 integer pairs; invariance suites; < 5 s"""
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 10_000
    xs = np.sort(rng.integers(0, 65, (2, n, 2)), axis=2)
    ys = np.sort(rng.integers(0, 65, (2, n, 2)), axis=2)
    a = np.stack([xs[0, :, 0], ys[0, :, 0], xs[0, :, 1], ys[0, :, 1]], axis=1)
    b = np.stack([xs[1, :, 0], ys[1, :, 0], xs[1, :, 1], ys[1, :, 1]], axis=1)
    want = raster_iou_batch(a, b)
    boxes_a = [Box(*map(float, r)) for r in a]
    boxes_b = [Box(*map(float, r)) for r in b]
    got = np.array([iou(p, q) for p, q in zip(boxes_a, boxes_b)])
    assert np.max(np.abs(got - want)) <= 1e-9

    # symmetry is exact; integer translation and power-of-two scaling are exact on integer boxes
    for p, q, v in zip(boxes_a[:2000], boxes_b[:2000], got[:2000]):
        assert iou(q, p) == v
        assert iou(p.shifted(17, -5), q.shifted(17, -5)) == v
        assert iou(p.scaled(4), q.scaled(4)) == v
    # arbitrary real transforms: equal up to rounding
    fa = rng.uniform(0, 100, (2000, 2))
    fb = rng.uniform(0, 100, (2000, 2))
    wa = rng.uniform(0, 50, (2000, 2))
    wb = rng.uniform(0, 50, (2000, 2))
    for k in range(2000):
        p = Box(*fa[k], *(fa[k] + wa[k]))
        q = Box(*fb[k], *(fb[k] + wb[k]))
        v = iou(p, q)
        assert 0.0 <= v <= 1.0
        assert iou(q, p) == v
        t = rng.uniform(-50, 50, 2)
        s = rng.uniform(0.1, 10)
        assert iou(p.shifted(*t), q.shifted(*t)) == pytest.approx(v, abs=1e-9)
        assert iou(p.scaled(s), q.scaled(s)) == pytest.approx(v, abs=1e-9)
    assert time.perf_counter() - t0 < 5.0


def random_proposal_set(rng, unit_loc):
    n = int(rng.integers(1, 30))
    n_cls = int(rng.integers(1, 4))
    xy = rng.uniform(0, 80, (n, 2))
    wh = rng.uniform(1, 40, (n, 2))
    # coarse scores create ties that exercise the index tie-break
    scores = np.round(rng.random((n, n_cls)), 2)
    loc = np.ones(n) if unit_loc else rng.random(n)
    return [Proposal(Box(*xy[i], *(xy[i] + wh[i])), scores[i], loc[i], i, 0) for i in range(n)]


@pytest.mark.acceptance
def test_criterion_2_suppression_fixtures():
    """Criterion 2: two-box cluster fixture gives {b2, 0.9, 0.48}; laar == baseline for unit locscores on 1e3 sets; < 10 s"""
    t0 = time.perf_counter()
    b1, b2 = Box(0, 0, 10, 10), Box(0, 0, 10, 7)
    assert iou(b1, b2) == pytest.approx(0.7, abs=1e-15)
    props = [Proposal(b1, [0.9], 0.4), Proposal(b2, [0.6], 0.8)]
    out = laar_nms(props, 0, NmsConfig(epsilon=0.5, mode="laar_cluster"))
    assert len(out) == 1
    assert (out[0].box, out[0].confidence, out[0].cqs) == (b2, 0.9, 0.48)
    out = suppress_image(props, NmsConfig(epsilon=0.5, mode="laar_cluster"))
    assert [(d.box, d.confidence, d.cqs) for d in out] == [(b2, 0.9, 0.48)]

    rng = np.random.default_rng(202)
    for _ in range(1000):
        props = random_proposal_set(rng, unit_loc=True)
        eps = float(rng.choice([0.3, 0.5, 0.7]))
        a = suppress_image(props, NmsConfig(epsilon=eps, mode="laar"))
        b = suppress_image(props, NmsConfig(epsilon=eps, mode="baseline"))
        assert a == b
    assert time.perf_counter() - t0 < 10.0


def avoid(x, kinks, margin):
    return all(abs(x - k) > margin for k in kinks)


@pytest.mark.acceptance
def test_criterion_3_gradients():
    """Criterion 3: analytic loss gradients match central differences (h=1e-6, rel 1e-4) on 1e3 points; unit-weight sums exact"""
    rng = np.random.default_rng(303)
    h = 1e-6
    checked = 0
    while checked < 1000:
        p = float(rng.uniform(0.01, 0.99))
        t = float(rng.random())
        if abs(p - t) < 1e-3:
            continue
        _, g = locscore_loss(p, t, "bce")
        fd = central_difference(lambda x: locscore_loss(x, t, "bce")[0], p, h)
        assert rel_close(g, fd, 1e-4), (p, t, g, fd)
        checked += 1

    checked = 0
    while checked < 1000:
        p = float(rng.uniform(-1.5, 2.5))
        t = float(rng.random())
        if not avoid(p - t, (-1.0, 0.0, 1.0), 1e-3):
            continue
        _, g = locscore_loss(p, t, "smooth_l1")
        fd = central_difference(lambda x: locscore_loss(x, t, "smooth_l1")[0], p, h)
        assert rel_close(g, fd, 1e-4), (p, t, g, fd)
        checked += 1

    checked = 0
    while checked < 1000:
        pred = rng.normal(0, 1.5, 4)
        target = rng.normal(0, 1.5, 4)
        d = pred - target
        if not all(avoid(v, (-1.0, 0.0, 1.0), 1e-3) for v in d):
            continue
        _, grad = smooth_l1_box_loss(pred, target)
        for k in range(4):
            def f(x, k=k):
                q = pred.copy()
                q[k] = x
                return smooth_l1_box_loss(q, target)[0]
            assert rel_close(grad[k], central_difference(f, pred[k], h), 1e-4)
        checked += 1

    for _ in range(1000):
        l_cl, l_bb, l_lc = rng.uniform(0, 10, 3).tolist()
        assert combined_loss(l_cl, l_bb, l_lc).l_total == l_cl + l_bb + l_lc


def random_small_dataset(rng):
    n_img = int(rng.integers(1, 6))
    n_cls = int(rng.integers(1, 4))
    scenes = {}
    for k in range(n_img):
        gts = []
        for _ in range(int(rng.integers(0, 5))):
            xy = rng.integers(0, 150, 2)
            wh = rng.choice([8, 20, 40, 80, 120], 2) + rng.integers(0, 8, 2)
            gts.append((int(rng.integers(0, n_cls)), [float(v) for v in (*xy, *(xy + wh))]))
        scenes[k] = gts
    dets = []
    for _ in range(int(rng.integers(0, 21))):
        image_id = int(rng.integers(0, n_img))
        gts = scenes[image_id]
        if gts and rng.random() < 0.7:
            c, b = gts[int(rng.integers(0, len(gts)))]
            j = rng.integers(-6, 7, 4)
            box = [b[0] + j[0], b[1] + j[1], max(b[0] + j[0], b[2] + j[2]), max(b[1] + j[1], b[3] + j[3])]
            if rng.random() < 0.15:
                c = int(rng.integers(0, n_cls))
        else:
            xy = rng.integers(0, 200, 2)
            box = [*xy, *(xy + rng.integers(4, 100, 2))]
            c = int(rng.integers(0, n_cls))
        conf = float(np.round(rng.random(), 1))  # ties on purpose
        dets.append((image_id, c, conf, [float(v) for v in box]))
    return dets, scenes


def engine_report(dets, scenes, cfg):
    scene_objs = [Scene(k, (400, 400), [(Box(*b), c) for c, b in gts]) for k, gts in scenes.items()]
    det_objs = [Detection(Box(*b), c, conf, conf, i) for i, c, conf, b in dets]
    return evaluate(det_objs, scene_objs, cfg)


def oracle_metrics(ref, thresholds):
    def mean(sel):
        vals = [v for k, v in ref.items() if sel(k)]
        return math.fsum(vals) / len(vals) if vals else None

    out = {
        "ap_mean": mean(lambda k: k[0] == "all"),
        "ap_50": mean(lambda k: k[0] == "all" and k[2] == 0.5),
        "ap_75": mean(lambda k: k[0] == "all" and k[2] == 0.75),
    }
    for b in ("small", "medium", "large"):
        out[f"ap_{b}"] = mean(lambda k, b=b: k[0] == b)
    per_class = {}
    for c in sorted({k[1] for k in ref}):
        v = mean(lambda k, c=c: k[0] == "all" and k[1] == c)
        if v is not None:
            per_class[c] = v
    by_thr = {t: mean(lambda k, t=t: k[0] == "all" and k[2] == t) for t in thresholds}
    return out, per_class, by_thr


@pytest.mark.acceptance
def test_criterion_4_evaluator_oracle():
    """Criterion 4: AP engine equals a naive evaluator on 100 random datasets (exact all_point, 1e-9 points_101); pinned fixtures hold"""
    assert average_precision([True], [0.9], 1, "all_point") == 1.0
    assert average_precision([False, True], [0.9, 0.8], 1, "all_point") == 0.5

    rng = np.random.default_rng(404)
    for _ in range(100):
        dets, scenes = random_small_dataset(rng)
        for interp, tol in (("all_point", 0.0), ("points_101", 1e-9)):
            cfg = EvalConfig(interpolation=interp)
            rep = engine_report(dets, scenes, cfg)
            ref = naive_evaluate(dets, scenes, cfg.iou_thresholds, interp, 100, tuple(AREAS))
            metrics, per_class, by_thr = oracle_metrics(ref, cfg.iou_thresholds)

            def same(a, b):
                if a is None or b is None:
                    return a is None and b is None
                return a == b if tol == 0.0 else abs(a - b) <= tol

            for k, v in metrics.items():
                assert same(getattr(rep, k), v), (interp, k, getattr(rep, k), v)
            assert rep.per_class_ap.keys() == per_class.keys()
            for c in per_class:
                assert same(rep.per_class_ap[c], per_class[c])
            for t in cfg.iou_thresholds:
                assert same(rep.ap_by_threshold[t], by_thr[t])


@pytest.mark.acceptance
@pytest.mark.slow
def test_criterion_5_delta_ap_experiment():
    """Criterion 5: mean dAP(laar_cluster - baseline) > 0 over 20 seeds (sign test p < 0.05), non-decreasing as locscore noise drops; < 5 min"""
    t0 = time.perf_counter()
    cfg = SimConfig(images=500, score_alignment=0.3, locscore_noise_sigma=0.05, jitter_sigma=0.15)
    sigmas = (0.3, 0.15, 0.05, 0.0)
    seeds = range(1000, 1020)
    deltas = delta_ap_experiment(cfg, seeds, sigmas, epsilon=0.5, top_k=100)
    means = {s: math.fsum(v) / len(v) for s, v in deltas.items()}

    main = deltas[0.05]
    pos = sum(d > 0 for d in main)
    n = sum(d != 0 for d in main)
    p_value = math.fsum(math.comb(n, k) for k in range(pos, n + 1)) / 2 ** n
    summary = ", ".join(f"sigma={s:g}: {means[s]:+.4f}" for s in sigmas)
    print(f"\nmean dAP {summary}; sign test {pos}/{n} positive, p={p_value:.2e}")

    assert means[0.05] > 0
    assert p_value < 0.05
    ordered = [means[s] for s in sigmas]
    assert all(b >= a for a, b in zip(ordered, ordered[1:])), ordered
    assert time.perf_counter() - t0 < 300.0


def hash_dir(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(path).iterdir())}


def laar_cli(args, seed_env):
    env = dict(os.environ, PYTHONHASHSEED=str(seed_env))
    res = subprocess.run([sys.executable, "-m", "laar", *map(str, args)], capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    return res


@pytest.mark.acceptance
def test_criterion_6_cli_determinism(tmp_path):
    """Criterion 6: every CLI command rerun with the same config writes byte-identical files"""
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"simulation": {"images": 8, "seed": 7}, "nms": {"epsilon": 0.5}}')
    runs = []
    for k in (1, 2):
        out = tmp_path / f"run{k}"
        laar_cli(["anchors", "--config", cfg, "--out", out / "anchors"], k)
        laar_cli(["simulate", "--config", cfg, "--out", out / "sim"], k)
        laar_cli(["nms", "--config", cfg, "--proposals", tmp_path / "run1" / "sim" / "proposals.json",
                  "--out", out / "nms"], k)
        laar_cli(["eval", "--config", cfg, "--detections", tmp_path / "run1" / "nms" / "detections.json",
                  "--annotations", tmp_path / "run1" / "sim" / "annotations.json", "--curves",
                  "--out", out / "eval"], k)
        laar_cli(["compare", "--config", cfg, "--seeds", 2, "--out", out / "compare"], k)
        runs.append({sub: hash_dir(out / sub) for sub in ("anchors", "sim", "nms", "eval", "compare")})
    expected = {
        "anchors": {"anchors.json"},
        "sim": {"annotations.json", "proposals.json"},
        "nms": {"detections.json"},
        "eval": {"report.json", "report.csv"},
        "compare": {"compare.csv", "compare_meta.json"},
    }
    assert {k: set(v) for k, v in runs[0].items()} == expected
    assert runs[0] == runs[1]


@pytest.mark.acceptance
def test_criterion_7_aiou_targets():
    """Criterion 7: AIoU targets equal iou against the matched GT on 1e3 random (grid, scene) pairs; empty scenes give zeros"""
    rng = np.random.default_rng(707)
    for trial in range(1000):
        size = (int(rng.integers(16, 65)), int(rng.integers(16, 65)))
        stride = int(rng.choice([8, 16]))
        levels = [(stride, float(rng.uniform(8, 32)))]
        if rng.random() < 0.5:
            levels.append((2 * stride, float(rng.uniform(16, 64))))
        layout = AnchorLayout(size, levels, scales=[1.0, float(rng.uniform(1.1, 2))],
                              aspect_ratios=sorted(rng.uniform(0.3, 3, int(rng.integers(1, 4))).tolist()))
        grid = generate_anchors(layout)
        n_gt = 0 if trial % 10 == 0 else int(rng.integers(1, 5))
        gts = []
        for _ in range(n_gt):
            xy = rng.uniform(0, size[0] * 0.8, 2)
            wh = rng.uniform(0, 40, 2)
            gts.append((Box(*xy, *(xy + wh)), int(rng.integers(0, 3))))
        scene = Scene(trial, size, gts)
        t = compute_aiou_targets(grid, scene)
        if n_gt == 0:
            assert not t.aiou.any() and (t.matched_gt == -1).all()
            continue
        boxes = [g.box for g in scene.ground_truths]
        for i in range(len(grid)):
            a = grid.box(i)
            assert t.aiou[i] == iou(a, boxes[t.matched_gt[i]])
            ref = [plain_iou(a.as_tuple(), b.as_tuple()) for b in boxes]
            assert t.aiou[i] == pytest.approx(max(ref), abs=1e-12)
