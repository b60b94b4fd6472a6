"""Pixel classification and SSC regression metrics.

Ratios whose denominator is zero are reported as ``None`` rather than 0.
Dataset-level pixel metrics pool one global confusion over all scenes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class PixelMetrics:
    precision: float | None
    recall: float | None
    f1: float | None
    iou: float | None


@dataclass(frozen=True)
class RegressionMetrics:
    rmse: float
    mae: float
    bias: float
    median_abs_error: float
    max_abs_error: float
    min_abs_error: float
    std_abs_error: float
    e75_abs_error: float
    e90_abs_error: float
    e95_abs_error: float
    n: int


def confusion(pred, label, valid=None):
    pred = np.asarray(pred) != 0
    label = np.asarray(label) != 0
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} and label {label.shape} differ in shape")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != pred.shape:
            raise ValueError(f"valid plane {valid.shape} does not match {pred.shape}")
    p, y = pred[valid], label[valid]
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    return Confusion(tp, fp, fn, int(p.size) - tp - fp - fn)


def _ratio(num, den):
    return num / den if den else None


def pixel_metrics(c):
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = _ratio(2.0 * precision * recall, precision + recall)
    return PixelMetrics(precision, recall, f1, _ratio(c.tp, c.tp + c.fp + c.fn))


def mean_defined(values):
    """Mean of the non-``None`` entries and how many were skipped."""
    kept = [v for v in values if v is not None]
    skipped = len(values) - len(kept)
    return (sum(kept) / len(kept) if kept else None), skipped


def regression_metrics(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    err = y - y_hat
    abs_err = np.abs(err)
    p75, p90, p95 = np.percentile(abs_err, [75, 90, 95])
    return RegressionMetrics(
        rmse=math.sqrt(float(np.mean(err**2))),
        mae=float(np.mean(abs_err)),
        bias=float(np.mean(err)),
        median_abs_error=float(np.median(abs_err)),
        max_abs_error=float(abs_err.max()),
        min_abs_error=float(abs_err.min()),
        std_abs_error=float(np.std(abs_err)),
        e75_abs_error=float(p75),
        e90_abs_error=float(p90),
        e95_abs_error=float(p95),
        n=int(y.size),
    )


# -- reports ---------------------------------------------------------------


def mask_report(per_scene):
    """Build a pixel-metric report.

    ``per_scene`` maps scene id -> {mask name: Confusion}. The report holds
    one entry per scene plus a pooled entry summing all confusions, and the
    per-scene mean F1 of each mask with its count of skipped undefined scenes.
    """
    scenes = []
    pooled = {}
    for sid, by_mask in per_scene.items():
        row = {"scene": sid}
        for m, c in by_mask.items():
            row[m] = {**asdict(c), **asdict(pixel_metrics(c))}
            pooled[m] = pooled.get(m, Confusion()) + c
        scenes.append(row)
    pooled_row = {m: {**asdict(c), **asdict(pixel_metrics(c))} for m, c in pooled.items()}
    scene_mean = {}
    for m in pooled:
        mean, skipped = mean_defined([r[m]["f1"] for r in scenes])
        scene_mean[m] = {"f1": mean, "skipped": skipped}
    f1s = [v["f1"] for v in pooled_row.values() if v["f1"] is not None]
    return {
        "scenes": scenes,
        "pooled": pooled_row,
        "pooled_mean_f1": sum(f1s) / len(f1s) if f1s else None,
        "scene_mean": scene_mean,
    }


def report_csv(report):
    """One CSV row per scene and mask plus the pooled rows (scene ``*pooled*``)."""
    buf = io.StringIO()
    fields = ["scene", "mask", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "iou"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in report["scenes"]:
        for m, vals in row.items():
            if m != "scene":
                w.writerow({"scene": row["scene"], "mask": m, **_blank_none(vals)})
    for m, vals in report["pooled"].items():
        w.writerow({"scene": "*pooled*", "mask": m, **_blank_none(vals)})
    return buf.getvalue()


def _blank_none(d):
    return {k: ("" if v is None else v) for k, v in d.items()}


def dumps(report):
    return json.dumps(report, indent=2, sort_keys=True)
