"""Depth-guided probability smoothing and decision-boundary search.

The filter is a cross bilateral filter: spatial weights come from pixel
distance, range weights from the *depth* difference to the center pixel,
and the averaged signal is the probability map. Neighbors further than
``max_depth_diff`` in depth, or without a depth reading, are left out.
"""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .metrics import Confusion, scores
from .raster import DepthMap, DimensionMismatchError, LabelMask, ProbabilityMap, Roi, roi_mask

__all__ = ["FilterConfig", "bilateral_filter", "SweepResult", "sweep_boundary", "write_sweep_csv"]


@dataclass(frozen=True)
class FilterConfig:
    window: int = 11
    sigma_r: float = 100.0
    sigma_s: float = 100.0
    max_depth_diff: float = 400.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be an odd integer >= 1")
        if not (self.sigma_r > 0 and self.sigma_s > 0):
            raise ValueError("sigma_r and sigma_s must be > 0")
        if not self.max_depth_diff >= 0:
            raise ValueError("max_depth_diff must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        return cls(window=int(d["window"]), sigma_r=float(d["sigma_r"]),
                   sigma_s=float(d["sigma_s"]), max_depth_diff=float(d["max_depth_diff"]))


@njit(cache=True)
def _bilateral(prob, depth, mask, half, g_range, g_space, out):
    H, W = prob.shape
    max_diff = g_range.shape[0] - 1
    for y in range(H):
        for x in range(W):
            if not mask[y, x] or depth[y, x] == 0:
                out[y, x] = prob[y, x]
                continue
            dc = np.int64(depth[y, x])
            num = 0.0
            wsum = 0.0
            lo = np.inf
            hi = -np.inf
            for yy in range(max(0, y - half), min(H, y + half + 1)):
                row = g_space[yy - y + half]
                for xx in range(max(0, x - half), min(W, x + half + 1)):
                    d = np.int64(depth[yy, xx])
                    if d == 0:
                        continue
                    r = abs(d - dc)
                    if r > max_diff:
                        continue
                    wt = g_range[r] * row[xx - x + half]
                    p = prob[yy, xx]
                    num += wt * p
                    wsum += wt
                    if p < lo:
                        lo = p
                    if p > hi:
                        hi = p
            v = num / wsum
            # rounding can push a convex combination one ulp past its inputs
            out[y, x] = min(max(v, lo), hi)
    return out


def _kernels(cfg: FilterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Range weights for integer depth gaps ``0..max_depth_diff`` and the
    spatial weight window."""
    r = np.arange(int(np.floor(min(cfg.max_depth_diff, 65535))) + 1, dtype=np.float64)
    g_range = np.exp(-(r * r) / (2.0 * cfg.sigma_r ** 2))
    d = np.arange(cfg.window, dtype=np.float64) - cfg.window // 2
    g_space = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * cfg.sigma_s ** 2))
    return g_range, g_space


def bilateral_filter(prob: ProbabilityMap, depth: DepthMap, cfg: FilterConfig = FilterConfig(),
                     domain: Roi | Sequence[Roi] | None = None) -> ProbabilityMap:
    """Smooth *prob* inside *domain* with depth-guided weights.

    Pixels outside the domain, and pixels without a depth reading, are
    copied unchanged. Neighbors are read from the whole raster; the window
    is clipped at the raster border.
    """
    if prob.size != depth.size:
        raise DimensionMismatchError("probability and depth differ", prob.size, depth.size)
    mask = roi_mask(domain, prob.width, prob.height)
    out = np.empty_like(prob.data)
    g_range, g_space = _kernels(cfg)
    _bilateral(prob.data, depth.data, mask, cfg.window // 2, g_range, g_space, out)
    return ProbabilityMap(out)


# ---------------------------------------------------------------------
# Boundary sweep
# ---------------------------------------------------------------------
@dataclass
class SweepResult:
    best_boundary: float
    best_f1: float
    curve: list[tuple[float, float, float, float]] = field(default_factory=list)


def boundary_grid(step: float = 0.01) -> np.ndarray:
    """``step, 2*step, ...`` strictly below 1, rounded to kill float drift."""
    if not 0.0 < step < 0.5:
        raise ValueError("step must lie in (0, 0.5)")
    k = int(np.ceil(round(1.0 / step, 10)))
    return np.round(np.arange(1, k) * step, 10)


def sweep_boundary(probs: Sequence[ProbabilityMap], truths: Sequence[LabelMask],
                   step: float = 0.01) -> SweepResult:
    """Pick the boundary maximizing pooled F1 over all maps.

    A pixel is positive when ``p >= boundary``. Ties go to the smallest
    boundary.
    """
    if len(probs) == 0 or len(probs) != len(truths):
        raise ValueError("need matching, nonempty lists of probability maps and labels")
    pos, neg = [], []
    for p, t in zip(probs, truths):
        if p.size != t.size:
            raise DimensionMismatchError("probability and truth differ", p.size, t.size)
        m = t.data.astype(bool)
        pos.append(p.data[m])
        neg.append(p.data[~m])
    pos = np.sort(np.concatenate(pos))
    neg = np.sort(np.concatenate(neg))
    grid = boundary_grid(step)
    tp = pos.size - np.searchsorted(pos, grid, side="left")
    fp = neg.size - np.searchsorted(neg, grid, side="left")
    curve, best = [], None
    for b, a, f in zip(grid, tp, fp):
        s = scores(Confusion(int(a), int(f), int(pos.size - a), int(neg.size - f)))
        curve.append((float(b), s.precision, s.recall, s.f1))
        if best is None or s.f1 > best[1]:
            best = (float(b), s.f1)
    return SweepResult(best[0], best[1], curve)


def write_sweep_csv(result: SweepResult, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["boundary", "precision", "recall", "f1"])
        for row in result.curve:
            w.writerow([f"{row[0]:.10g}", *(f"{x:.6f}" for x in row[1:])])
