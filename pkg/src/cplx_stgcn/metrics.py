"""Regression and detection metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    kind: str
    mse: float | None = None
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    flags: list = field(default_factory=list)   # metrics forced to 0 by an empty denominator

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def compute_metrics(predictions, truth, kind: str, threshold: float = 0.5) -> MetricsReport:
    """``kind`` is "regression" (complex MSE) or "classification" (thresholded scores)."""
    p = np.asarray(predictions)
    y = np.asarray(truth)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} != truth shape {y.shape}")
    if kind == "regression":
        e = p - y
        return MetricsReport(kind, mse=float(np.mean(e.real ** 2 + e.imag ** 2)) if e.size else 0.0)
    if kind != "classification":
        raise ValueError(f"unknown metric kind {kind!r}")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    yb = y.astype(bool)
    pb = p >= threshold
    tp = int(np.sum(pb & yb))
    fp = int(np.sum(pb & ~yb))
    fn = int(np.sum(~pb & yb))
    tn = int(np.sum(~pb & ~yb))
    flags: list = []
    prec = _ratio(tp, tp + fp, "precision", flags)
    rec = _ratio(tp, tp + fn, "recall", flags)
    f1 = 0.0 if tp == 0 else 2 * prec * rec / (prec + rec)
    if tp == 0:
        flags.append("f1")
    acc = _ratio(tp + tn, tp + fp + fn + tn, "accuracy", flags)
    return MetricsReport(kind, accuracy=acc, precision=prec, recall=rec, f1=f1,
                         tp=tp, fp=fp, fn=fn, tn=tn, flags=flags)


def constant_baseline_accuracy(truth, value: int) -> float:
    y = np.asarray(truth)
    return float(np.mean(y == value)) if y.size else 0.0
