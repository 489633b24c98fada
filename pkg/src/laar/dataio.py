"""JSON/CSV persistence for annotations, proposals, detections and reports.

On disk boxes use COCO ``[x, y, w, h]``. Proposal and detection records also
carry ``bbox_xyxy`` (exact corners) because ``x + w`` does not always give
back ``x2`` in floating point; readers prefer it when present. Unknown fields
are ignored. Floats are written with ``repr`` precision, so they parse back
equal. See FORMATS.md for the schemas.
"""

import csv
import io
import json
import math
import os

from .anchors import Scene
from .geometry import Box
from .scoring import Proposal
from .suppression import Detection


class DataError(ValueError):
    """Malformed input file or record."""


def read_json(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(raw)
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 at byte offset {exc.start}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at byte offset {exc.pos} (line {exc.lineno}): {exc.msg}") from exc


def write_json(path, meta, key, records, extra=None):
    """Write ``{"meta": ..., **extra, key: [records]}`` with one record per line."""
    head = {"meta": meta} if meta is not None else {}
    head.update(extra or {})
    parts = ["{"]
    for k, v in head.items():
        parts.append(f"{json.dumps(k)}:{_dumps(v)},")
    body = ",\n".join(_dumps(r) for r in records)
    parts.append(f"{json.dumps(key)}:[\n{body}\n]}}\n" if records else f"{json.dumps(key)}:[]}}\n")
    atomic_write(path, "\n".join(parts))


def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _require(rec, key, where):
    if not isinstance(rec, dict):
        raise DataError(f"{where}: expected an object")
    if key not in rec:
        raise DataError(f"{where}: missing required field {key!r}")
    return rec[key]


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise DataError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _bbox(rec, where):
    if "bbox_xyxy" in rec:
        c = rec["bbox_xyxy"]
        if not isinstance(c, list) or len(c) != 4:
            raise DataError(f"{where}: bbox_xyxy must be a list of 4 numbers")
        try:
            return Box(*(_number(v, where) for v in c))
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from exc
    b = _require(rec, "bbox", where)
    if not isinstance(b, list) or len(b) != 4:
        raise DataError(f"{where}: bbox must be a list [x, y, w, h]")
    x, y, w, h = (_number(v, where) for v in b)
    if w < 0 or h < 0:
        raise DataError(f"{where}: bbox has negative width or height")
    return Box.from_xywh(x, y, w, h)


def _image_key(image_id):
    return (0, image_id, "") if isinstance(image_id, (int, float)) else (1, 0, str(image_id))


def _box_fields(box):
    return {"bbox": box.to_xywh(), "bbox_xyxy": list(box.as_tuple())}


# annotations -----------------------------------------------------------


def load_annotations(path):
    """COCO-subset annotation file to a list of scenes (file image order)."""
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: top level must be an object")
    images = _require(doc, "images", path)
    anns = doc.get("annotations", [])
    cats = doc.get("categories")
    scenes = {}
    for i, im in enumerate(images):
        where = f"{path}: images[{i}]"
        iid = _require(im, "id", where)
        w = _number(_require(im, "width", where), where)
        h = _number(_require(im, "height", where), where)
        if iid in scenes:
            raise DataError(f"{where}: duplicate image id {iid!r}")
        scenes[iid] = Scene(iid, (w, h), [])
    cat_ids = None
    if cats is not None:
        cat_ids = {_require(c, "id", f"{path}: categories[{k}]") for k, c in enumerate(cats)}
    gts = {iid: [] for iid in scenes}
    for i, ann in enumerate(anns):
        where = f"{path}: annotations[{i}]"
        iid = _require(ann, "image_id", where)
        cid = _require(ann, "category_id", where)
        if iid not in scenes:
            raise DataError(f"{where}: image_id {iid!r} does not resolve to an image")
        if cat_ids is not None and cid not in cat_ids:
            raise DataError(f"{where}: category_id {cid!r} does not resolve to a category")
        if isinstance(cid, bool) or not isinstance(cid, int) or cid < 0:
            raise DataError(f"{where}: category_id must be a nonnegative integer")
        gts[iid].append((_bbox(ann, where), cid))
    return [Scene(iid, s.image_size, gts[iid]) for iid, s in scenes.items()]


def save_annotations(scenes, path, meta=None, categories=None):
    images = []
    anns = []
    cats = set()
    for s in scenes:
        w, h = s.image_size
        images.append({"id": s.image_id, "width": w, "height": h})
        for g in s.ground_truths:
            cats.add(g.class_id)
            anns.append({"id": len(anns) + 1, "image_id": s.image_id, "category_id": g.class_id,
                         **_box_fields(g.box), "area": g.box.area})
    if categories is None:
        categories = [{"id": c, "name": f"class_{c}"} for c in sorted(cats)]
    write_json(path, meta, "annotations", anns, {"images": images, "categories": categories})


# proposals -------------------------------------------------------------


def save_proposals(proposals, path, meta=None, provenance=None):
    recs = []
    for i, p in enumerate(proposals):
        rec = {"image_id": p.image_id, "anchor_id": p.anchor_id, **_box_fields(p.box),
               "scores": list(p.class_scores), "locscore": p.locscore}
        if provenance is not None:
            rec.update(provenance[i])
        recs.append(rec)
    write_json(path, meta, "proposals", recs)


def load_proposals(path):
    """Proposals in file order (the order defines downstream tie-breaking)."""
    doc = read_json(path)
    recs = _require(doc, "proposals", path) if isinstance(doc, dict) else doc
    if not isinstance(recs, list):
        raise DataError(f"{path}: 'proposals' must be a list")
    out = []
    for i, r in enumerate(recs):
        where = f"{path}: proposals[{i}]"
        scores = _require(r, "scores", where)
        if not isinstance(scores, list):
            raise DataError(f"{where}: scores must be a list")
        ls = _number(_require(r, "locscore", where), where)
        if not 0.0 <= ls <= 1.0:
            raise DataError(f"{where}: locscore {ls} outside [0, 1]")
        out.append(Proposal(_bbox(r, where), [_number(s, where) for s in scores], ls,
                            int(r.get("anchor_id", -1)), _require(r, "image_id", where)))
    return out


# detections ------------------------------------------------------------


def _sorted_detections(dets):
    order = sorted(range(len(dets)), key=lambda i: (_image_key(dets[i].image_id), -dets[i].confidence))
    return [dets[i] for i in order]


def save_detections(dets, path, meta=None):
    """Records sorted by (image_id, confidence descending), stable."""
    recs = [
        {"image_id": d.image_id, "category_id": d.class_id, **_box_fields(d.box),
         "score": d.confidence, "cqs": d.cqs}
        for d in _sorted_detections(dets)
    ]
    write_json(path, meta, "detections", recs)


def load_detections(path):
    doc = read_json(path)
    recs = _require(doc, "detections", path) if isinstance(doc, dict) else doc
    if not isinstance(recs, list):
        raise DataError(f"{path}: 'detections' must be a list")
    out = []
    for i, r in enumerate(recs):
        where = f"{path}: detections[{i}]"
        cid = _require(r, "category_id", where)
        if isinstance(cid, bool) or not isinstance(cid, int):
            raise DataError(f"{where}: category_id must be an integer")
        score = _number(_require(r, "score", where), where)
        cq = _number(r.get("cqs", score), where)
        out.append(Detection(_bbox(r, where), cid, score, cq, _require(r, "image_id", where)))
    return out


# reports ---------------------------------------------------------------


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in report.metrics().items():
        w.writerow([k, _fmt(v)])
    for c, v in sorted(report.per_class_ap.items()):
        w.writerow([f"ap_class_{c}", _fmt(v)])
    for t, v in sorted(report.ap_by_threshold.items()):
        w.writerow([f"ap_iou_{t:g}", _fmt(v)])
    return buf.getvalue()


def save_report(report, json_path, csv_path=None, meta=None, include_curves=False):
    doc = {"meta": meta} if meta is not None else {}
    doc.update(report.to_dict(include_curves=include_curves))
    atomic_write(json_path, json.dumps(doc, indent=2, allow_nan=False) + "\n")
    if csv_path:
        atomic_write(csv_path, report_csv(report))
