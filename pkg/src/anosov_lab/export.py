"""Deterministic writers for report.json, morse.json and the box CSVs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .boxes import BoxCover
from .laminations import LABELS

FLOAT_DIGITS = 12


def clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, floats at 12 significant digits, non-finite -> null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        x = float(f"{x:.{FLOAT_DIGITS}g}")
        return 0.0 if x == 0 else x
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_box_csv(path: Path, cover: BoxCover, boxes, labels) -> Path:
    """Rows (i, j, k, label) sorted by box index."""
    boxes = np.asarray(boxes, dtype=np.int64)
    labels = list(labels)
    order = np.argsort(boxes, kind="stable")
    i, j, k = cover.unravel(boxes[order])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "k", "label"])
        for a, b, c, o in zip(i, j, k, order):
            w.writerow([int(a), int(b), int(c), labels[o]])
    return path


def write_hit_table(path: Path, table: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y1", "y2", "t", "hit_y1", "hit_y2", "hit_t", "hit_length"])
        for row in table:
            w.writerow([f"{v:.{FLOAT_DIGITS}g}" for v in row])
    return path


def export_pipeline(p, outdir: Path) -> list[Path]:
    """Write every artifact the stages run so far can produce; returns the paths written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if p.levels:
        g, m = p.levels[-1]
        morse = m.to_json()
        for row in morse["classes"]:
            row["n_boxes"] = len(row.pop("boxes"))  # box lists live in classes.csv
        morse["hasse"] = m.hasse_pairs()
        morse["resolution"] = list(g.cover.resolution)
        written.append(write_json(outdir / "morse.json", morse))
        boxes, labels = [], []
        for cid, b in enumerate(m.classes):
            boxes.append(b)
            labels += [cid] * len(b)
        if boxes:
            written.append(write_box_csv(outdir / "classes.csv", g.cover, np.concatenate(boxes), labels))
    if p.attractors or p.repellers:
        cov = p.graph.cover
        boxes, labels = [], []
        for kind, certs in (("attractor", p.attractors), ("repeller", p.repellers)):
            for a in certs:
                boxes.append(a.boxes)
                labels += [f"{kind}:{a.class_id}"] * len(a.boxes)
        written.append(write_box_csv(outdir / "terminal_classes.csv", cov, np.concatenate(boxes), labels))
    if p.laminations:
        cov = p.laminations[0].cover
        boxes = np.concatenate([lam.boxes for lam in p.laminations])
        labels = [lam.class_id for lam in p.laminations for _ in range(lam.n_boxes)]
        # laminations of different classes are disjoint; keep the first label on any overlap
        boxes, first = np.unique(boxes, return_index=True)
        written.append(write_box_csv(outdir / "laminations.csv", cov, boxes, [labels[q] for q in first]))
    if p.gaps is not None:
        gd = p.gaps
        written.append(write_box_csv(outdir / "gaps.csv", gd.cover, gd.boxes, [LABELS[v] for v in gd.labels]))
        written.append(write_hit_table(outdir / "S_table.csv", gd.S_table))
    if p.section is not None:
        sec = p.section
        written.append(write_box_csv(outdir / "section.csv", sec.cover, sec.boxes, ["section"] * len(sec.boxes)))
    written.append(write_json(outdir / "report.json", p.report))
    return written
