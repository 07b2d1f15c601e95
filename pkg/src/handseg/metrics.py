"""Pixel confusion counts and precision / recall / F1."""
from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from .raster import DimensionMismatchError, LabelMask, Roi

__all__ = ["Confusion", "Scores", "confusion", "confusion_arrays", "scores", "f1_score"]


class Confusion(NamedTuple):
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):  # type: ignore[override]
        return Confusion(*(a + b for a, b in zip(self, other)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def pooled(cls, items: Iterable["Confusion"]) -> "Confusion":
        out = cls()
        for c in items:
            out = out + c
        return out


class Scores(NamedTuple):
    precision: float
    recall: float
    f1: float


def confusion_arrays(pred: np.ndarray, truth: np.ndarray) -> Confusion:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return Confusion(tp, fp, fn, pred.size - tp - fp - fn)


def confusion(pred: LabelMask, truth: LabelMask, domain: Roi | None = None) -> Confusion:
    """Count tp/fp/fn/tn over *domain* (the whole raster by default)."""
    if pred.size != truth.size:
        raise DimensionMismatchError("prediction and truth differ", pred.size, truth.size)
    p, t = pred.data, truth.data
    if domain is not None:
        sl = domain.clamp(pred.width, pred.height).slices
        p, t = p[sl], t[sl]
    return confusion_arrays(p, t)


def scores(c: Confusion) -> Scores:
    """Precision, recall and F1; each undefined ratio is reported as 0."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    return Scores(precision, recall, f1_score(precision, recall))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
