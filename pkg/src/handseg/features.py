"""Depth-difference offset feature and the binary split predicate.

The feature compares the depth at two probe pixels whose displacement from
the center pixel is divided by the center depth::

    f(x) = D[x + round(u / D[x])] - D[x + round(v / D[x])]

so an offset expressed in pixel*millimeters covers roughly the same metric
extent regardless of how far the surface is from the camera. Probes that
leave the raster, and centers or probes on a sensor hole, read
``BACKGROUND_DEPTH``. A sample goes to the left child iff ``f < theta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .raster import BACKGROUND_DEPTH, DepthMap, Pixel, depth_at

__all__ = [
    "SplitParams",
    "DepthStack",
    "probe",
    "feature",
    "goes_left",
    "batch_features",
]


@dataclass(frozen=True)
class SplitParams:
    u: tuple[float, float]
    v: tuple[float, float]
    theta: float

    def __post_init__(self):
        vals = (*self.u, *self.v, self.theta)
        if len(self.u) != 2 or len(self.v) != 2 or not np.all(np.isfinite(vals)):
            raise ValueError(f"split parameters must be finite 2-vectors and scalar: {self}")
        object.__setattr__(self, "u", (float(self.u[0]), float(self.u[1])))
        object.__setattr__(self, "v", (float(self.v[0]), float(self.v[1])))
        object.__setattr__(self, "theta", float(self.theta))


def probe(depth: DepthMap | np.ndarray, p: Pixel | tuple[int, int], offset: Sequence[float],
          background: int = BACKGROUND_DEPTH) -> Pixel:
    """Pixel reached from ``p`` by the depth-normalized *offset*."""
    dc = depth_at(depth, p, background)
    # Python's round() is round-half-to-even, same as np.rint in the kernels
    return Pixel(int(p[0]) + round(offset[0] / dc), int(p[1]) + round(offset[1] / dc))


def feature(depth: DepthMap | np.ndarray, p: Pixel | tuple[int, int], u: Sequence[float],
            v: Sequence[float], background: int = BACKGROUND_DEPTH) -> int:
    """Signed depth difference (mm) between the *u* and *v* probes around ``p``."""
    a = depth_at(depth, probe(depth, p, u, background), background)
    b = depth_at(depth, probe(depth, p, v, background), background)
    return a - b


def goes_left(depth: DepthMap | np.ndarray, p: Pixel | tuple[int, int], s: SplitParams,
              background: int = BACKGROUND_DEPTH) -> bool:
    return feature(depth, p, s.u, s.v, background) < s.theta


# ---------------------------------------------------------------------
# Batch evaluation over many images
# ---------------------------------------------------------------------
class DepthStack:
    """Several depth maps packed into one flat buffer for the kernels.

    Maps may differ in size; ``offsets[i]`` is the start of map ``i`` in
    ``buffer`` and ``widths``/``heights`` its shape.
    """

    def __init__(self, maps: Sequence[DepthMap | np.ndarray]):
        arrays = [m.data if isinstance(m, DepthMap) else np.asarray(m, dtype=np.uint16) for m in maps]
        if not arrays:
            raise ValueError("DepthStack needs at least one map")
        self.widths = np.array([a.shape[1] for a in arrays], dtype=np.int64)
        self.heights = np.array([a.shape[0] for a in arrays], dtype=np.int64)
        sizes = self.widths * self.heights
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.buffer = np.concatenate([a.ravel() for a in arrays]).astype(np.uint16, copy=False)

    def __len__(self) -> int:
        return len(self.widths)


@njit(cache=True, inline="always")
def _read(buf, off, w, h, x, y, bg):
    if 0 <= x < w and 0 <= y < h:
        d = buf[off + y * w + x]
        if d != 0:
            return float(d)
    return bg


@njit(cache=True, inline="always")
def _feature(buf, off, w, h, x, y, ux, uy, vx, vy, bg):
    dc = _read(buf, off, w, h, x, y, bg)
    a = _read(buf, off, w, h, x + int(np.rint(ux / dc)), y + int(np.rint(uy / dc)), bg)
    b = _read(buf, off, w, h, x + int(np.rint(vx / dc)), y + int(np.rint(vy / dc)), bg)
    return a - b


@njit(cache=True)
def _batch_features(buf, offs, ws, hs, img, xs, ys, ux, uy, vx, vy, bg, out):
    for i in range(img.shape[0]):
        k = img[i]
        out[i] = _feature(buf, offs[k], ws[k], hs[k], xs[i], ys[i], ux, uy, vx, vy, bg)
    return out


def batch_features(stack: DepthStack, img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                   u: Sequence[float], v: Sequence[float],
                   background: int = BACKGROUND_DEPTH) -> np.ndarray:
    """Feature values for the samples ``(img[i], xs[i], ys[i])`` of *stack*."""
    out = np.empty(len(img), dtype=np.float64)
    return _batch_features(
        stack.buffer, stack.offsets, stack.widths, stack.heights,
        np.asarray(img, dtype=np.int64), np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64),
        float(u[0]), float(u[1]), float(v[0]), float(v[1]), float(background), out,
    )
