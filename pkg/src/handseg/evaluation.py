"""Dataset-level evaluation of a cascade model.

Scores are micro-averaged: confusion counts of all images are pooled
before precision, recall and F1 are computed.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cascade import CascadeModel, run_cascade
from .metrics import Confusion, Scores, confusion, scores
from .raster import SamplePair

__all__ = ["BatchReport", "evaluate_batch", "timing_stats", "write_report_csv", "write_report_json"]

PHASES = ("stage1_ms", "rois_ms", "stage2_ms", "filter_ms", "total_ms")


@dataclass
class BatchReport:
    scores: Scores
    confusion: Confusion
    per_image: list[Scores]
    per_image_confusion: list[Confusion]
    ms: list[float]
    timing: dict[str, dict[str, float]] = field(default_factory=dict)
    names: list[str] = field(default_factory=list)


def timing_stats(values: Sequence[float]) -> dict[str, float]:
    a = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(a.mean()),
        "median": float(np.median(a)),
        "p95": float(np.percentile(a, 95)),
    }


def evaluate_batch(model: CascadeModel, dataset: Sequence[SamplePair], use_filter: bool = True,
                   names: Sequence[str] | None = None) -> BatchReport:
    """Run the cascade on every pair and score it against the labels."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    per_conf, per_scores, ms = [], [], []
    phases: dict[str, list[float]] = {k: [] for k in PHASES}
    for pair in dataset:
        t = {}
        start = time.perf_counter()
        _, mask, _ = run_cascade(model, pair.depth, use_filter=use_filter, timings=t)
        ms.append((time.perf_counter() - start) * 1e3)
        for k in PHASES:
            phases[k].append(t.get(k, 0.0))
        c = confusion(mask, pair.labels)
        per_conf.append(c)
        per_scores.append(scores(c))
    pooled = Confusion.pooled(per_conf)
    timing = {"image_ms": timing_stats(ms)}
    timing.update({k: timing_stats(v) for k, v in phases.items()})
    if names is None:
        names = [str(i) for i in range(len(dataset))]
    return BatchReport(scores(pooled), pooled, per_scores, per_conf, ms, timing, list(names))


def write_report_csv(report: BatchReport, path: str | os.PathLike, timing: bool = True) -> None:
    """``image,precision,recall,f1,ms`` rows followed by one ``ALL`` summary row.

    With ``timing=False`` the ``ms`` column is left empty so that reports of
    identical runs are byte-identical.
    """
    def ms(v):
        return f"{v:.3f}" if timing else ""

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "precision", "recall", "f1", "ms"])
        for name, s, t in zip(report.names, report.per_image, report.ms):
            w.writerow([name, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", ms(t)])
        s = report.scores
        w.writerow(["ALL", f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}",
                    ms(report.timing["image_ms"]["mean"])])


def report_dict(report: BatchReport) -> dict:
    return {
        "scores": report.scores._asdict(),
        "confusion": report.confusion._asdict(),
        "timing_ms": report.timing,
        "images": [
            {"image": n, **s._asdict(), "confusion": c._asdict(), "ms": t}
            for n, s, c, t in zip(report.names, report.per_image, report.per_image_confusion, report.ms)
        ],
    }


def write_report_json(report: BatchReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_dict(report), fh, indent=2)
        fh.write("\n")
