"""Grounding accuracy: Acc@threshold under BEV or 3D IoU, split by attribute.

Evaluation consumes prediction files ({sample_id, box, confidence} JSONL),
so every method, learned or reference, is scored identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from bevground.geometry import Box3D, bev_iou, iou_3d

DEFAULT_THRESHOLDS = (0.25, 0.5)
IOU_KINDS = ("bev", "3d")


@dataclass
class EvalRecord:
    sample_id: str
    predicted: Box3D
    gt: Box3D
    attribute: str

    def iou(self, kind: str) -> float:
        if kind == "bev":
            return bev_iou(self.predicted, self.gt)
        if kind == "3d":
            return iou_3d(self.predicted, self.gt)
        raise ValueError(f"unknown IoU kind {kind!r}")


def accuracy(records, iou_kind: str, threshold: float) -> float:
    """Fraction of records whose prediction overlaps GT with IoU >= threshold."""
    records = list(records)
    if not records:
        raise ValueError("accuracy requires a nonempty record set")
    hits = sum(1 for r in records if r.iou(iou_kind) >= threshold)
    return hits / len(records)


def report(records, thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Accuracy table over {unique, multiple, overall} x {bev, 3d} x thresholds.

    Overall is computed over all records (the count-weighted subgroup mean),
    never the average of subgroup accuracies. Absent subgroups are null.
    """
    records = list(records)
    if not records:
        raise ValueError("report requires a nonempty record set")
    groups = {
        "unique": [r for r in records if r.attribute == "unique"],
        "multiple": [r for r in records if r.attribute == "multiple"],
        "overall": records,
    }
    table: dict = {"counts": {k: len(v) for k, v in groups.items()}, "accuracy": {}}
    # IoUs are recomputed per (kind, threshold) pair; cache per kind instead.
    for kind in IOU_KINDS:
        ious = {id(r): r.iou(kind) for r in records}
        table["accuracy"][kind] = {}
        for thr in thresholds:
            row = {}
            for name, group in groups.items():
                if not group:
                    row[name] = None
                    continue
                row[name] = sum(1 for r in group if ious[id(r)] >= thr) / len(group)
            table["accuracy"][kind][f"{thr:g}"] = row
    return table


def mean_report(tables) -> dict:
    """Mean of accuracy cells across trial reports (counts from the first)."""
    tables = list(tables)
    if not tables:
        raise ValueError("mean_report requires at least one table")
    out = {"counts": tables[0]["counts"], "accuracy": {}, "trials": len(tables)}
    for kind in tables[0]["accuracy"]:
        out["accuracy"][kind] = {}
        for thr, row in tables[0]["accuracy"][kind].items():
            merged = {}
            for name in row:
                cells = [t["accuracy"][kind][thr][name] for t in tables]
                merged[name] = None if cells[0] is None else sum(cells) / len(cells)
            out["accuracy"][kind][thr] = merged
    return out


def format_table(table: dict) -> str:
    """Aligned text rendering of a report table."""
    lines = []
    counts = table["counts"]
    header = f"{'':>6} {'thr':>6} {'unique':>10} {'multiple':>10} {'overall':>10}"
    lines.append(f"records: unique={counts['unique']} multiple={counts['multiple']} overall={counts['overall']}")
    if "trials" in table:
        lines.append(f"trials: {table['trials']} (mean)")
    lines.append(header)

    def fmt(v):
        return "   -  " if v is None else f"{100.0 * v:6.2f}"

    for kind in table["accuracy"]:
        for thr, row in table["accuracy"][kind].items():
            lines.append(
                f"{kind.upper():>6} {thr:>6} {fmt(row['unique']):>10} {fmt(row['multiple']):>10} {fmt(row['overall']):>10}"
            )
    return "\n".join(lines)


def read_predictions(path) -> dict:
    """{sample_id: (Box3D, confidence)} from a prediction JSONL file."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out[d["sample_id"]] = (Box3D.from_list(d["box"]), float(d.get("confidence", 0.0)))
    return out


def records_from_files(pred_path, samples) -> list[EvalRecord]:
    """Join predictions against ground-truth samples; missing predictions error."""
    preds = read_predictions(pred_path)
    records = []
    missing = []
    for s in samples:
        if s.sample_id not in preds:
            missing.append(s.sample_id)
            continue
        records.append(EvalRecord(s.sample_id, preds[s.sample_id][0], s.referred, s.attribute))
    if missing:
        raise ValueError(f"{len(missing)} sample(s) lack predictions, e.g. {missing[:3]}")
    return records
