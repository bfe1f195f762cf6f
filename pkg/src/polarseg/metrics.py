"""Segmentation quality metrics: Dice, Jaccard, conformity, precision, recall
and the average distance between boundaries."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

COLUMNS = ("dice", "adb", "conformity", "jaccard", "precision", "recall")


@dataclass(frozen=True)
class OverlapMetrics:
    dice: float
    jaccard: float
    conformity: float
    precision: float
    recall: float
    precision_defined: bool = True


def overlap_metrics(pred, truth):
    """Pixel-count overlap scores of a binary prediction against the truth.

    Conformity is ``(3*dice - 2)/dice`` and is ``-inf`` when dice is 0. An empty
    prediction reports precision 0 with ``precision_defined=False``.
    """
    p = np.asarray(pred) > 0.5
    t = np.asarray(truth) > 0.5
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    if not t.any():
        raise ValueError("ground-truth mask is empty")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    dice = 2 * tp / (2 * tp + fp + fn)
    jaccard = tp / (tp + fp + fn)
    defined = tp + fp > 0
    precision = tp / (tp + fp) if defined else 0.0
    recall = tp / (tp + fn)
    conformity = (3 * dice - 2) / dice if dice > 0 else float("-inf")
    return OverlapMetrics(dice, jaccard, conformity, precision, recall, defined)


def boundary_points(mask):
    """Foreground pixels with at least one 4-neighbour in the background, as (x, y)."""
    m = np.pad(np.asarray(mask) > 0.5, 1, constant_values=False)
    core = m[1:-1, 1:-1]
    interior = m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    ys, xs = np.nonzero(core & ~interior)
    return np.stack([xs, ys], axis=1).astype(np.float64)


def adb(pred_points, truth_points):
    """Symmetric average nearest-point distance between two boundary point sets."""
    a = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(truth_points, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("adb needs two non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


@dataclass(frozen=True)
class MetricReport:
    name: str
    dice: float
    adb: float
    conformity: float
    jaccard: float
    precision: float
    recall: float
    precision_defined: bool = True


def evaluate_masks(pred, truth, name=""):
    ov = overlap_metrics(pred, truth)
    pb = boundary_points(pred)
    distance = adb(pb, boundary_points(truth)) if len(pb) else float("inf")
    return MetricReport(
        name, ov.dice, distance, ov.conformity, ov.jaccard, ov.precision, ov.recall, ov.precision_defined
    )


def mean_report(reports, name="mean"):
    """Unweighted per-image mean; non-finite entries (undefined conformity or adb) are skipped."""
    if not reports:
        raise ValueError("no reports to aggregate")
    values = {}
    for col in COLUMNS:
        col_vals = np.array([getattr(r, col) for r in reports], dtype=np.float64)
        finite = col_vals[np.isfinite(col_vals)]
        values[col] = float(finite.mean()) if len(finite) else float("nan")
    return MetricReport(name, **values)


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "-inf" if v == float("-inf") else ("inf" if v == float("inf") else f"{v:.6f}")
    return str(v)


def table_text(reports, summary):
    """Tab-separated table in Dice, Adb, Conform, Jaccard, Precision, Recall order."""
    lines = ["name\t" + "\t".join(COLUMNS)]
    for r in list(reports) + [summary]:
        lines.append(r.name + "\t" + "\t".join(_fmt(getattr(r, c)) for c in COLUMNS))
    return "\n".join(lines) + "\n"


def per_image_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("name", *COLUMNS, "precision_defined"))
    for r in reports:
        writer.writerow((r.name, *(_fmt(getattr(r, c)) for c in COLUMNS), _fmt(r.precision_defined)))
    return buf.getvalue()


def summary_keyvalue(summary, extra=None):
    items = {k: v for k, v in asdict(summary).items() if k in COLUMNS}
    items.update(extra or {})
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())
