"""Per-pixel forest evaluation.

The forest posterior at a pixel is the mean of the leaf posteriors reached
in each tree. :func:`infer_map` evaluates a whole raster (or only the
pixels inside one or more ROIs) with a compiled traversal loop.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numba import njit

from .features import goes_left
from .forest import Forest, Tree
from .raster import BACKGROUND_DEPTH, DepthMap, Pixel, ProbabilityMap, Roi, roi_mask

__all__ = ["tree_posterior", "forest_probability", "infer_map", "PackedForest"]


def tree_posterior(tree: Tree, depth: DepthMap, p: Pixel | tuple[int, int],
                   background: int | None = None) -> float:
    """Walk *tree* from the root for pixel ``p`` and return the leaf posterior."""
    bg = BACKGROUND_DEPTH if background is None else background
    i = 0
    while tree.left[i] >= 0:
        i = int(tree.left[i] if goes_left(depth, p, tree.params(i), bg) else tree.right[i])
    return float(tree.posterior[i])


def forest_probability(forest: Forest, depth: DepthMap, p: Pixel | tuple[int, int]) -> float:
    bg = forest.background_depth
    return sum(tree_posterior(t, depth, p, bg) for t in forest.trees) / len(forest.trees)


class PackedForest:
    """All trees of a forest concatenated into shared node arrays."""

    def __init__(self, forest: Forest):
        trees = forest.trees
        sizes = np.array([len(t) for t in trees], dtype=np.int64)
        self.roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)

        def cat_children(name):
            parts = []
            for t, base in zip(trees, self.roots):
                a = getattr(t, name).astype(np.int64)
                parts.append(np.where(a >= 0, a + base, -1))
            return np.concatenate(parts)

        self.left = cat_children("left")
        self.right = cat_children("right")
        u = np.concatenate([t.u for t in trees])
        v = np.concatenate([t.v for t in trees])
        self.ux, self.uy = np.ascontiguousarray(u[:, 0]), np.ascontiguousarray(u[:, 1])
        self.vx, self.vy = np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1])
        self.theta = np.concatenate([t.theta for t in trees])
        self.posterior = np.concatenate([t.posterior for t in trees])
        self.background = float(forest.background_depth)


@njit(cache=True)
def _infer(depth, mask, stride, left, right, ux, uy, vx, vy, theta, post, roots, bg, out):
    H, W = depth.shape
    T = roots.shape[0]
    for y in range(0, H, stride):
        for x in range(0, W, stride):
            if not mask[y, x]:
                continue
            d = depth[y, x]
            if d == 0:
                continue
            dc = float(d)
            acc = 0.0
            for t in range(T):
                n = roots[t]
                while left[n] >= 0:
                    px = x + int(np.rint(ux[n] / dc))
                    py = y + int(np.rint(uy[n] / dc))
                    a = bg
                    if 0 <= px < W and 0 <= py < H and depth[py, px] != 0:
                        a = float(depth[py, px])
                    qx = x + int(np.rint(vx[n] / dc))
                    qy = y + int(np.rint(vy[n] / dc))
                    b = bg
                    if 0 <= qx < W and 0 <= qy < H and depth[qy, qx] != 0:
                        b = float(depth[qy, qx])
                    if a - b < theta[n]:
                        n = left[n]
                    else:
                        n = right[n]
                acc += post[n]
            out[y, x] = acc / T
    return out


@njit(cache=True)
def _fill_strided(out, mask, depth, stride):
    H, W = out.shape
    for y in range(H):
        for x in range(W):
            if mask[y, x] and depth[y, x] != 0:
                out[y, x] = out[y - y % stride, x - x % stride]
            else:
                out[y, x] = 0.0


def infer_map(forest: Forest | PackedForest, depth: DepthMap,
              roi: Roi | Sequence[Roi] | None = None, stride: int = 1) -> ProbabilityMap:
    """Forest probability for every pixel of *roi* (whole map when None).

    Pixels outside the ROI and pixels with zero depth are 0. With
    ``stride > 1`` only every stride-th pixel in each direction is
    evaluated and its value is copied to the rest of its block.
    """
    packed = forest if isinstance(forest, PackedForest) else PackedForest(forest)
    mask = roi_mask(roi, depth.width, depth.height)
    out = np.zeros((depth.height, depth.width), dtype=np.float64)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        _infer(depth.data, mask, 1, packed.left, packed.right, packed.ux, packed.uy,
               packed.vx, packed.vy, packed.theta, packed.posterior, packed.roots,
               packed.background, out)
    else:
        grid = np.ones_like(mask)
        _infer(depth.data, grid, stride, packed.left, packed.right, packed.ux, packed.uy,
               packed.vx, packed.vy, packed.theta, packed.posterior, packed.roots,
               packed.background, out)
        _fill_strided(out, mask, depth.data, stride)
    return ProbabilityMap(out)
