"""Forest training.

Each tree draws its own pixel sample from the dataset, then grows depth
first. At every node a batch of random offset pairs is drawn; for each pair
a handful of thresholds is drawn inside the observed feature range, and the
(offsets, threshold) with the lowest weighted child entropy wins.

Every random draw comes from one ``numpy`` generator per tree seeded with
``rng_seed + tree_index`` and consumed in a fixed order, so a tree is a
pure function of its inputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .features import DepthStack, SplitParams, _feature, batch_features
from .forest import Forest, Tree, TrainConfig
from .raster import Pixel, Roi, SamplePair, roi_mask

__all__ = [
    "PointSample",
    "NoValidSplit",
    "sample_training_points",
    "split_loss",
    "best_candidate",
    "train_tree",
    "train_forest",
]

log = logging.getLogger(__name__)

RoiSpec = Sequence[Roi] | Roi | None


class NoValidSplit(Exception):
    """Every candidate left one child empty; the node must become a leaf."""


@dataclass(frozen=True)
class PointSample:
    """Training pixels as parallel arrays (``image`` indexes the dataset)."""

    image: np.ndarray
    x: np.ndarray
    y: np.ndarray
    label: np.ndarray
    skipped: int = 0

    def __len__(self):
        return len(self.image)

    def points(self) -> list[tuple[int, Pixel, int]]:
        return [(int(i), Pixel(int(x), int(y)), int(c))
                for i, x, y, c in zip(self.image, self.x, self.y, self.label)]

    def subset(self, idx: np.ndarray) -> "PointSample":
        return PointSample(self.image[idx], self.x[idx], self.y[idx], self.label[idx], self.skipped)


def sample_training_points(dataset: Sequence[SamplePair], rois: Sequence[RoiSpec] | None,
                           cfg: TrainConfig, tree_index: int = 0,
                           rng: np.random.Generator | None = None) -> PointSample:
    """Draw the training pixels for tree *tree_index*.

    ``rois[i]`` restricts image ``i`` to a rectangle or a union of
    rectangles; ``None`` (for the whole list or one entry) means the full
    image. Pixels with zero depth are never drawn. Images whose region
    holds no valid pixel contribute nothing and are counted in
    ``skipped``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    if rois is not None and len(rois) != len(dataset):
        raise ValueError(f"{len(rois)} ROI entries for {len(dataset)} images")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed + tree_index)
    n_img = cfg.images_per_tree or len(dataset)
    chosen = rng.choice(len(dataset), size=n_img, replace=n_img > len(dataset))

    parts, skipped = [], 0
    for i in chosen:
        pair = dataset[i]
        region = pair.depth.valid
        r = None if rois is None else rois[i]
        if r is not None:
            # an empty ROI list (nothing detected) masks out the whole image
            region = region & roi_mask(r, pair.depth.width, pair.depth.height)
        cand = np.flatnonzero(region)
        if cand.size == 0:
            skipped += 1
            continue
        pick = cand[rng.integers(0, cand.size, size=cfg.pixels_per_image)]
        ys, xs = np.divmod(pick, pair.depth.width)
        lab = pair.labels.data.ravel()[pick]
        parts.append((np.full(pick.size, i, dtype=np.int64), xs, ys, lab))
    if skipped:
        log.warning("%d image(s) had no valid pixel in their region and were skipped", skipped)
    if not parts:
        e = np.empty(0, dtype=np.int64)
        return PointSample(e, e, e, e.astype(np.uint8), skipped)
    cols = [np.concatenate(c) for c in zip(*parts)]
    return PointSample(cols[0], cols[1].astype(np.int64), cols[2].astype(np.int64),
                       cols[3].astype(np.uint8), skipped)


# ---------------------------------------------------------------------
# Split objective
# ---------------------------------------------------------------------
@njit(cache=True)
def _loss_from_counts(l0, l1, r0, r1):
    n = l0 + l1 + r0 + r1
    loss = 0.0
    for a, b in ((l0, l1), (r0, r1)):
        m = a + b
        if m == 0:
            continue
        h = 0.0
        if a > 0:
            p = a / m
            h -= p * math.log2(p)
        if b > 0:
            p = b / m
            h -= p * math.log2(p)
        loss += (m / n) * h
    return loss


def split_loss(samples: Sequence[tuple[int, bool]]) -> float:
    """Weighted child entropy (bits) of ``(class, went_left)`` pairs."""
    counts = np.zeros((2, 2), dtype=np.int64)  # [side, class]; side 0 = left
    for cls, left in samples:
        counts[0 if left else 1, int(cls)] += 1
    if counts.sum() == 0:
        raise ValueError("split_loss needs at least one sample")
    return float(_loss_from_counts(counts[0, 0], counts[0, 1], counts[1, 0], counts[1, 1]))


@njit(cache=True)
def _search(buf, offs, ws, hs, img, xs, ys, cls, U, V, R, bg):
    """Return (candidate, threshold, loss) of the best split, candidate -1 if none."""
    n = img.shape[0]
    C, T = R.shape
    f = np.empty(n)
    best_c, best_theta, best_loss = -1, 0.0, np.inf
    for c in range(C):
        ux, uy, vx, vy = U[c, 0], U[c, 1], V[c, 0], V[c, 1]
        fmin, fmax = np.inf, -np.inf
        for i in range(n):
            k = img[i]
            v = _feature(buf, offs[k], ws[k], hs[k], xs[i], ys[i], ux, uy, vx, vy, bg)
            f[i] = v
            if v < fmin:
                fmin = v
            if v > fmax:
                fmax = v
        if not fmax > fmin:
            continue
        th = fmin + (fmax - fmin) * R[c]
        order = np.argsort(th, kind="mergesort")
        sth = th[order]
        rank = np.empty(T, dtype=np.int64)
        rank[order] = np.arange(T)
        # bin = number of thresholds <= f; sample goes left at sorted j iff bin <= j
        cnt = np.zeros((T + 1, 2), dtype=np.int64)
        for i in range(n):
            lo, hi = 0, T
            v = f[i]
            while lo < hi:
                mid = (lo + hi) >> 1
                if sth[mid] <= v:
                    lo = mid + 1
                else:
                    hi = mid
            cnt[lo, cls[i]] += 1
        tot0 = 0
        tot1 = 0
        for j in range(T + 1):
            tot0 += cnt[j, 0]
            tot1 += cnt[j, 1]
        cum = np.zeros((T, 2), dtype=np.int64)
        a0 = 0
        a1 = 0
        for j in range(T):
            a0 += cnt[j, 0]
            a1 += cnt[j, 1]
            cum[j, 0] = a0
            cum[j, 1] = a1
        for t in range(T):
            j = rank[t]
            l0, l1 = cum[j, 0], cum[j, 1]
            if l0 + l1 == 0 or l0 + l1 == n:
                continue
            loss = _loss_from_counts(l0, l1, tot0 - l0, tot1 - l1)
            if loss < best_loss:
                best_c, best_theta, best_loss = c, th[t], loss
    return best_c, best_theta, best_loss


def _draw_candidates(cfg: TrainConfig, rng: np.random.Generator):
    C, T, r = cfg.candidates_per_node, cfg.thresholds_per_candidate, cfg.offset_range
    U = rng.uniform(-r, r, size=(C, 2))
    V = rng.uniform(-r, r, size=(C, 2))
    R = rng.random(size=(C, T))
    return U, V, R


def best_candidate(samples: PointSample, stack: DepthStack, cfg: TrainConfig,
                   rng: np.random.Generator) -> tuple[SplitParams, float]:
    """Search random (u, v, theta) candidates for the lowest split loss.

    Ties go to the first candidate drawn. Raises NoValidSplit when every
    candidate leaves a child empty.
    """
    U, V, R = _draw_candidates(cfg, rng)
    c, theta, loss = _search(
        stack.buffer, stack.offsets, stack.widths, stack.heights,
        samples.image, samples.x, samples.y, samples.label.astype(np.int64),
        U, V, R, float(cfg.background_depth),
    )
    if c < 0:
        raise NoValidSplit("no candidate split separates the samples")
    return SplitParams(tuple(U[c]), tuple(V[c]), theta), float(loss)


def _posterior(n1: int, n: int) -> float:
    return (n1 + 1.0) / (n + 2.0)


def train_tree(dataset: Sequence[SamplePair], rois: Sequence[RoiSpec] | None,
               cfg: TrainConfig, tree_index: int = 0,
               stack: DepthStack | None = None) -> Tree:
    """Grow one tree on its own pixel sample."""
    rng = np.random.default_rng(cfg.rng_seed + tree_index)
    samples = sample_training_points(dataset, rois, cfg, tree_index, rng=rng)
    if len(samples) == 0:
        raise ValueError("no valid training pixels in any image")
    if stack is None:
        stack = DepthStack([p.depth for p in dataset])

    left, right, u, v, theta, post, sup = [], [], [], [], [], [], []

    def new_node():
        left.append(-1); right.append(-1)
        u.append((0.0, 0.0)); v.append((0.0, 0.0)); theta.append(0.0)
        post.append(0.0); sup.append(0)
        return len(left) - 1

    root = new_node()
    work = [(root, np.arange(len(samples)), 0)]
    while work:
        node, idx, depth = work.pop()
        n = idx.size
        n1 = int(samples.label[idx].sum())
        purity = max(n1, n - n1) / n
        split = None
        if depth < cfg.max_depth and n >= cfg.min_samples_leaf and n >= 2 and purity < cfg.purity_stop:
            sub = samples.subset(idx)
            try:
                split, _ = best_candidate(sub, stack, cfg, rng)
            except NoValidSplit:
                split = None
        if split is None:
            post[node] = _posterior(n1, n)
            sup[node] = n
            continue
        f = batch_features(stack, sub.image, sub.x, sub.y, split.u, split.v, cfg.background_depth)
        go = f < split.theta
        u[node], v[node], theta[node] = split.u, split.v, split.theta
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        # right pushed first so the left subtree is grown (and draws randomness) first
        work.append((rnode, idx[~go], depth + 1))
        work.append((lnode, idx[go], depth + 1))
    return Tree(left, right, u, v, theta, post, sup)


def train_forest(dataset: Sequence[SamplePair], rois: Sequence[RoiSpec] | None,
                 cfg: TrainConfig) -> Forest:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    stack = DepthStack([p.depth for p in dataset])
    trees = []
    for t in range(cfg.num_trees):
        trees.append(train_tree(dataset, rois, cfg, t, stack=stack))
        log.info("tree %d/%d: %d nodes, depth %d", t + 1, cfg.num_trees, len(trees[-1]), trees[-1].depth())
    return Forest(trees, cfg)
