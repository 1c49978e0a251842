"""Segmentation and risk-map evaluation.

Everything in here is a pure function over numpy arrays.  Scores are
reported in percent where the convention is percent (mIoU, F1, Brier);
RMSE stays in the units of its inputs.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

__all__ = [
    "confusion_matrix", "miou", "f1_class", "brier", "rmse",
    "select_threshold", "run_aggregate", "geobench_custom",
    "write_report", "write_risk_map", "read_risk_map",
]


def _as_labels(a) -> np.ndarray:
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.integer):
        raise DataError(f"label mask must be integer, got {a.dtype}")
    return a.ravel()


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def confusion_matrix(pred, truth, n_classes: int) -> np.ndarray:
    """(C, C) counts, rows = truth class, columns = predicted class."""
    _check_shapes(pred, truth)
    p, t = _as_labels(pred), _as_labels(truth)
    if p.size and (p.min() < 0 or p.max() >= n_classes):
        raise DataError("predicted class id outside [0, n_classes)")
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise DataError("true class id outside [0, n_classes)")
    cm = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return cm.reshape(n_classes, n_classes)


def miou(pred, truth, n_classes: int) -> float:
    """Mean IoU in percent; classes absent from both sides are excluded."""
    cm = confusion_matrix(pred, truth, n_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    if not present.any():
        raise DataError("no pixels to evaluate")
    return float(np.mean(tp[present] / denom[present]) * 100.0)


def f1_class(pred, truth, cls: int, n_classes: int | None = None) -> float:
    """F1 of one class in percent; 0 when the class never occurs."""
    _check_shapes(pred, truth)
    p = _as_labels(pred) == cls
    t = _as_labels(truth) == cls
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 100.0 * 2 * tp / denom


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0:
        raise DataError("empty probability map")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise DataError("probabilities must lie in [0, 1]")
    return p


def brier(probs, truth) -> float:
    """Mean squared probability error x 100 (percent scale)."""
    _check_shapes(probs, truth)
    p = _check_probs(probs)
    y = _as_labels(truth)
    if y.size and (y.min() < 0 or y.max() > 1):
        raise DataError("Brier truth must be binary")
    return float(np.mean((p.ravel() - y) ** 2) * 100.0)


def rmse(pred, truth) -> float:
    _check_shapes(pred, truth)
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    return float(np.sqrt(np.mean((p - t) ** 2)))


THRESHOLD_GRID = np.round(np.arange(101) / 100.0, 2)


def select_threshold(probs, labels) -> float:
    """Decision threshold maximizing positive-class F1 on validation data.

    A pixel is predicted positive when p >= threshold.  The search runs
    over the fixed grid {0.00, 0.01, ..., 1.00}; ties break toward the
    lower threshold.  Degenerate labels (one class only) fall back to 0.5
    with a warning.
    """
    _check_shapes(probs, labels)
    p = _check_probs(probs).ravel()
    y = _as_labels(labels).astype(bool)
    if y.all() or not y.any():
        warnings.warn("validation labels are all one class; threshold 0.5",
                      stacklevel=2)
        return 0.5
    best_f1, best_thr = -1.0, 0.0
    for thr in THRESHOLD_GRID:
        pred = p >= thr
        tp = int(np.sum(pred & y))
        denom = 2 * tp + int(np.sum(pred & ~y)) + int(np.sum(~pred & y))
        f1 = 0.0 if denom == 0 else 2 * tp / denom
        if f1 > best_f1:
            best_f1, best_thr = f1, float(thr)
    return best_thr


def run_aggregate(values) -> tuple:
    """(mean, sample std) over per-seed metric values; needs >= 2 runs."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DataError("aggregation needs at least 2 runs")
    return float(v.mean()), float(v.std(ddof=1))


def geobench_custom(rmse_runs) -> float:
    """(1 - std) x mean over already-normalized per-run RMSE values.

    The values passed in are taken to be on a normalized (unitless) scale,
    e.g. each run's RMSE divided by the std of its ground truth; this
    function does not renormalize.  The raw RMSE from `rmse` remains the
    authoritative number; this aggregate exists only as a comparable
    convenience score.
    """
    mean, std = run_aggregate(rmse_runs)
    return (1.0 - std) * mean


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def write_report(path, report: dict) -> None:
    """Pretty, key-sorted JSON; identical dict -> identical bytes."""
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_risk_map(path, probs: np.ndarray) -> None:
    """8-bit grayscale portable graymap plus a lossless raw sidecar.

    The image holds round(p*255); the sidecar `<path>.f32` holds the exact
    probabilities as little-endian float32, row major, prefixed with the
    (height, width) extents.
    """
    p = _check_probs(probs)
    if p.ndim != 2:
        raise ShapeError(f"risk map must be 2D, got shape {p.shape}")
    h, w = p.shape
    gray = np.round(p * 255.0).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())
    with open(str(path) + ".f32", "wb") as f:
        f.write(struct.pack("<II", h, w))
        f.write(p.astype("<f4").tobytes())


def read_risk_map(path) -> np.ndarray:
    """Exact probabilities back from the float32 sidecar."""
    raw = Path(str(path) + ".f32").read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated risk-map sidecar")
    h, w = struct.unpack("<II", raw[:8])
    if len(raw) != 8 + 4 * h * w:
        raise DataError(f"{path}: sidecar length does not match extents")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(h, w).copy()
