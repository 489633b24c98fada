"""Command-line driver: ``laar {anchors,simulate,nms,eval,compare}``.

Settings come from defaults, then ``--config`` (JSON), then flags. The fully
resolved configuration is echoed into the ``meta`` block of every output
file together with its hash, so any output can be regenerated. Exit codes:
0 success, 1 usage/config error, 2 data/schema error, 3 internal error.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from . import __version__
from .anchors import AnchorLayout, generate_anchors
from .dataio import (
    DataError,
    atomic_write,
    load_annotations,
    load_detections,
    load_proposals,
    read_json,
    save_annotations,
    save_detections,
    save_proposals,
    save_report,
    write_json,
)
from .evaluation import EvalConfig, evaluate
from .kernels import BACKEND
from .simulation import SimConfig, default_layout, run_comparison, simulate
from .suppression import MODES, NmsConfig, suppress_image

log = logging.getLogger("laar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class UsageParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    simulation: SimConfig = field(default_factory=SimConfig)
    anchors: AnchorLayout = None
    nms: NmsConfig = field(default_factory=NmsConfig)
    compare_modes: list = field(default_factory=lambda: ["baseline", "laar", "laar_cluster"])
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    protocol: str = "coco"

    def __post_init__(self):
        if self.anchors is None:
            self.anchors = default_layout(self.simulation.image_size)

    def mode_configs(self):
        return [NmsConfig.from_dict({**self.nms.to_dict(), "mode": m}) for m in self.compare_modes]

    def to_dict(self):
        return {
            "anchors": self.anchors.to_dict(),
            "simulation": self.simulation.to_dict(),
            "nms": self.nms.to_dict(),
            "compare_modes": list(self.compare_modes),
            "evaluation": {"protocol": self.protocol, **self.evaluation.to_dict()},
        }

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_config(args):
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = read_json(args.config)
        except DataError as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
    unknown = set(raw) - {"anchors", "simulation", "nms", "compare_modes", "evaluation"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        sim = dict(raw.get("simulation", {}))
        if getattr(args, "seed", None) is not None:
            sim["seed"] = args.seed
        sim_cfg = SimConfig.from_dict(sim)

        nms = dict(raw.get("nms", {}))
        for flag, key in (("mode", "mode"), ("epsilon", "epsilon"), ("top_k", "top_k"),
                          ("per_class", "per_class"), ("score_floor", "score_floor")):
            v = getattr(args, flag, None)
            if v is not None:
                nms[key] = v
        nms_cfg = NmsConfig.from_dict(nms)

        ev = dict(raw.get("evaluation", {}))
        if getattr(args, "protocol", None):
            ev["protocol"] = args.protocol
        protocol = ev.get("protocol", "coco")
        if protocol not in ("coco", "voc"):
            raise ValueError(f"unknown evaluation protocol {protocol!r}")
        if getattr(args, "interpolation", None):
            ev["interpolation"] = args.interpolation
        eval_cfg = EvalConfig.from_dict(ev)

        modes = raw.get("compare_modes", ["baseline", "laar", "laar_cluster"])
        if getattr(args, "modes", None):
            modes = args.modes.split(",")
        modes = [NmsConfig(mode=m).mode for m in modes]
        if not modes:
            raise ValueError("compare_modes must not be empty")

        layout = AnchorLayout.from_dict(raw["anchors"]) if "anchors" in raw else None
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return RunConfig(sim_cfg, layout, nms_cfg, modes, eval_cfg, protocol)


def _meta(rc, command):
    return {
        "tool": "laar",
        "version": __version__,
        "command": command,
        "config_hash": rc.digest(),
        "seed": rc.simulation.seed,
        "config": rc.to_dict(),
    }


def _out(args, name):
    return os.path.join(args.out, name)


def cmd_anchors(args, rc):
    grid = generate_anchors(rc.anchors)
    recs = [{"id": i, "bbox_xyxy": row} for i, row in enumerate(grid.anchors.tolist())]
    path = _out(args, "anchors.json")
    write_json(path, _meta(rc, "anchors"), "anchors", recs,
               {"layout": rc.anchors.to_dict(), "level_offsets": list(grid.level_offsets)})
    print(f"{len(grid)} anchors over {len(rc.anchors.levels)} levels -> {path}")


def cmd_simulate(args, rc):
    grid = generate_anchors(rc.anchors)
    sim = simulate(rc.simulation, grid)
    meta = _meta(rc, "simulate")
    ann = _out(args, "annotations.json")
    prop = _out(args, "proposals.json")
    save_annotations(sim.scenes, ann, meta=meta)
    save_proposals(sim.proposals, prop, meta=meta, provenance=sim.provenance)
    n_gt = sum(len(s.ground_truths) for s in sim.scenes)
    print(f"{len(sim.samples)} images, {n_gt} ground truths, {len(sim.proposals)} proposals -> {args.out}")


def cmd_nms(args, rc):
    proposals = load_proposals(args.proposals)
    by_image = {}
    for p in proposals:
        by_image.setdefault(p.image_id, []).append(p)
    dets = []
    for image_id, props in by_image.items():
        dets.extend(suppress_image(props, rc.nms))
    path = _out(args, "detections.json")
    save_detections(dets, path, meta=_meta(rc, "nms"))
    print(f"{len(proposals)} proposals in {len(by_image)} images -> {len(dets)} detections "
          f"(mode={rc.nms.mode}, epsilon={rc.nms.epsilon:g}, top_k={rc.nms.top_k}) -> {path}")


def cmd_eval(args, rc):
    scenes = load_annotations(args.annotations)
    dets = load_detections(args.detections)
    try:
        report = evaluate(dets, scenes, rc.evaluation)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_report(report, _out(args, "report.json"), _out(args, "report.csv"),
                meta=_meta(rc, "eval"), include_curves=args.curves)
    for k, v in report.metrics().items():
        print(f"{k:>10s}  {'n/a' if v is None else f'{v:.4f}'}")


COMPARE_COLUMNS = ("ap_mean", "ap_50", "ap_75", "ap_small", "ap_medium", "ap_large")


def _fmt(v):
    return "" if v is None else repr(float(v))


def cmd_compare(args, rc):
    grid = generate_anchors(rc.anchors)
    modes = rc.mode_configs()
    seeds = [rc.simulation.seed + k for k in range(args.seeds)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "mode", "epsilon", "top_k"] + list(COMPARE_COLUMNS)
               + [f"delta_{c}" for c in COMPARE_COLUMNS])
    summary = []
    for seed in seeds:
        rows = run_comparison(rc.simulation.replace(seed=seed), modes, rc.evaluation, grid)
        for r in rows:
            m = r.report.metrics()
            w.writerow([seed, r.mode, repr(r.nms.epsilon), r.nms.top_k]
                       + [_fmt(m[c]) for c in COMPARE_COLUMNS]
                       + [_fmt(r.delta[c]) for c in COMPARE_COLUMNS])
            summary.append((seed, r.mode, m["ap_mean"], r.delta_ap))
    path = _out(args, "compare.csv")
    atomic_write(path, buf.getvalue())
    atomic_write(_out(args, "compare_meta.json"),
                  json.dumps(_meta(rc, "compare"), indent=2) + "\n")
    print(f"{'seed':>6s}  {'mode':<14s}{'AP':>8s}{'dAP':>9s}")
    for seed, mode, ap, d in summary:
        ap_s = "n/a" if ap is None else f"{ap:.4f}"
        d_s = "n/a" if d is None else f"{d:+.4f}"
        print(f"{seed:>6d}  {mode:<14s}{ap_s:>8s}{d_s:>9s}")
    print(f"-> {path}")


def _mode_arg(v):
    try:
        return NmsConfig(mode=v).mode
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    p = UsageParser(prog="laar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"laar {__version__} ({BACKEND} kernels)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, help="override simulation seed")

    def nms_flags(sp):
        sp.add_argument("--mode", type=_mode_arg, help=f"one of {', '.join(m.replace('_', '-') for m in MODES)}")
        sp.add_argument("--epsilon", type=float, help="IoU suppression threshold (default 0.5)")
        sp.add_argument("--top-k", dest="top_k", type=int, help="detections kept per image (default 100)")
        sp.add_argument("--per-class", dest="per_class", action=argparse.BooleanOptionalAction, default=None)
        sp.add_argument("--score-floor", dest="score_floor", type=float,
                        help="drop class scores below this before NMS (default 0.01, 0 disables)")

    def eval_flags(sp):
        sp.add_argument("--protocol", choices=("coco", "voc"))
        sp.add_argument("--interpolation", choices=("all_point", "points_101", "points_11"))

    sp = sub.add_parser("anchors", help="write the anchor grid")
    common(sp)
    sp.set_defaults(func=cmd_anchors)

    sp = sub.add_parser("simulate", help="write synthetic annotations and proposals")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("nms", help="suppress a proposal file into detections")
    common(sp)
    sp.add_argument("--proposals", required=True)
    nms_flags(sp)
    sp.set_defaults(func=cmd_nms)

    sp = sub.add_parser("eval", help="evaluate detections against annotations")
    common(sp)
    sp.add_argument("--detections", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--curves", action="store_true", help="include PR curves in report.json")
    eval_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="simulate once, evaluate several NMS modes, report dAP")
    common(sp)
    sp.add_argument("--modes", help="comma-separated modes (default baseline,laar,laar_cluster)")
    sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds (default 1)")
    nms_flags(sp)
    eval_flags(sp)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seeds", 1) < 1:
            raise ConfigError("--seeds must be >= 1")
        rc = resolve_config(args)
        args.func(args, rc)
    except ConfigError as exc:
        print(f"laar: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"laar: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violations and bugs
        log.debug("internal error", exc_info=True)
        print(f"laar: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
