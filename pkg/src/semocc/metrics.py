"""Occupancy evaluation: confusion counts, geometric IoU, and mean IoU.

Ground-truth noise voxels (255) are excluded from every count. Geometric
IoU binarizes voxels into empty vs any-class; mean IoU averages per-class
IoU over classes 1..N.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import NOISE_ID, LabelMap, OccupancyGrid
from .errors import IncompatibleGridError, InvalidInputError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionMatrix:
    """(N+1)x(N+1) voxel counts over {empty=0, classes 1..N}, gt rows,
    prediction columns, plus the number of ignored (gt noise) voxels."""

    counts: np.ndarray
    ignored_count: int

    def __post_init__(self):
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise InvalidInputError(f"counts must be square (N+1)x(N+1), got {c.shape}")
        if np.any(c < 0) or self.ignored_count < 0:
            raise InvalidInputError("counts must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "ignored_count", int(self.ignored_count))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.ignored_count

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise InvalidInputError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.counts + other.counts,
                               self.ignored_count + other.ignored_count)


def confusion(pred: OccupancyGrid, gt: OccupancyGrid, labels: LabelMap) -> ConfusionMatrix:
    """Accumulate voxelwise gt/pred counts; gt noise voxels are only tallied
    in `ignored_count`. The prediction must not contain noise labels."""
    if pred.spec != gt.spec:
        raise IncompatibleGridError("prediction and ground truth use different grids")
    n = labels.n_classes
    p = pred.labels.reshape(-1).astype(np.int64)
    g = gt.labels.reshape(-1).astype(np.int64)
    if np.any(p == NOISE_ID):
        raise InvalidInputError("prediction contains noise labels")
    if int(p.max(initial=0)) > n or int(g[g != NOISE_ID].max(initial=0)) > n:
        raise InvalidInputError(f"labels exceed class count N={n}")
    keep = g != NOISE_ID
    ignored = int((~keep).sum())
    flat = g[keep] * (n + 1) + p[keep]
    counts = np.bincount(flat, minlength=(n + 1) * (n + 1)).reshape(n + 1, n + 1)
    return ConfusionMatrix(counts, ignored)


def geometric_iou(cm: ConfusionMatrix) -> float:
    """Occupied-vs-empty IoU: TP both non-empty, FP pred-only, FN gt-only.

    Both grids empty of occupancy leaves the ratio undefined; that case
    returns 1.0 (a perfect match of nothing).
    """
    tp = int(cm.counts[1:, 1:].sum())
    fp = int(cm.counts[0, 1:].sum())
    fn = int(cm.counts[1:, 0].sum())
    denom = tp + fp + fn
    if denom == 0:
        return 1.0
    return tp / denom


def per_class_iou(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """IoU per class 1..N and a mask of classes present in gt or pred.
    Absent classes get IoU nan."""
    n = cm.n_classes
    iou = np.full(n, np.nan)
    present = np.zeros(n, dtype=bool)
    for i in range(1, n + 1):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[:, i].sum()) - tp
        fn = int(cm.counts[i, :].sum()) - tp
        if tp + fp + fn > 0:
            present[i - 1] = True
            iou[i - 1] = tp / (tp + fp + fn)
    return iou, present


def mean_iou(cm: ConfusionMatrix, labels: LabelMap,
             strict_n_classes: bool = False) -> tuple[float, np.ndarray]:
    """Mean per-class IoU over classes 1..N.

    By default classes absent from both grids are left out of the mean;
    with `strict_n_classes` they count as 0 and the divisor is fixed at N.
    """
    if cm.n_classes != labels.n_classes:
        raise InvalidInputError(
            f"confusion has {cm.n_classes} classes, label map has {labels.n_classes}")
    iou, present = per_class_iou(cm)
    if not np.any(present):
        raise UndefinedMetricError("no semantic class present in either grid")
    if strict_n_classes:
        return float(np.where(present, iou, 0.0).sum() / labels.n_classes), iou
    return float(iou[present].mean()), iou


def report(cm: ConfusionMatrix, labels: LabelMap,
           strict_n_classes: bool = False) -> dict:
    """Structured metrics dump; values are floats or None for absent classes."""
    iou, present = per_class_iou(cm)
    try:
        miou, _ = mean_iou(cm, labels, strict_n_classes)
    except UndefinedMetricError:
        miou = None
    return {
        "geometric_iou": geometric_iou(cm),
        "miou": miou,
        "per_class": {
            name: (float(iou[cid - 1]) if present[cid - 1] else None)
            for cid, name in labels.classes
        },
        "voxels_compared": cm.total,
        "voxels_ignored": cm.ignored_count,
    }


def format_report_text(rep: dict) -> str:
    """Flat key=value rendering of `report`."""
    lines = [
        f"geometric_iou = {_fmt(rep['geometric_iou'])}",
        f"miou = {_fmt(rep['miou'])}",
    ]
    for name, value in rep["per_class"].items():
        lines.append(f"iou_{name} = {_fmt(value)}")
    lines.append(f"voxels_compared = {rep['voxels_compared']}")
    lines.append(f"voxels_ignored = {rep['voxels_ignored']}")
    return "\n".join(lines)


def format_report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)


def _fmt(value) -> str:
    return "nan" if value is None else f"{value:.6f}"
