"""Slow, independent reference implementations used by the tests.

Each oracle works on plain Python lists or per-element loops and shares no
code with the package beyond the data types it receives.
"""
import math

import numpy as np

from handseg.features import SplitParams
from handseg.forest import Leaf, Split

BG = 50000


def brute_feature(a, x, y, u, v, bg=BG):
    rows = a.tolist()
    h, w = len(rows), len(rows[0])

    def read(px, py):
        if 0 <= px < w and 0 <= py < h and rows[py][px] != 0:
            return rows[py][px]
        return bg

    dc = read(x, y)
    pu = (x + round(u[0] / dc), y + round(u[1] / dc))
    pv = (x + round(v[0] / dc), y + round(v[1] / dc))
    return read(*pu) - read(*pv)


def entropy_oracle(samples):
    """Weighted child entropy summed term by term, base-2."""
    total = len(samples)
    loss = 0.0
    for side in (True, False):
        child = [c for c, s in samples if s == side]
        for h in (0, 1):
            if not child:
                continue
            p = sum(1 for c in child if c == h) / len(child)
            if p > 0:
                loss -= (len(child) / total) * p * math.log(p, 2)
    return loss


def random_nodes(rng, depth, offset=3000.0):
    """Random nested tree; every branch stops early with probability 0.2."""
    if depth == 0 or rng.random() < 0.2:
        return Leaf(float(rng.random()), 0)
    params = SplitParams(tuple(rng.uniform(-offset, offset, 2)), tuple(rng.uniform(-offset, offset, 2)),
                         float(rng.uniform(-1500, 1500)))
    return Split(params, random_nodes(rng, depth - 1, offset), random_nodes(rng, depth - 1, offset))


def enumerate_paths(node, prefix=()):
    """All root-to-leaf paths as (list of (params, went_left), posterior)."""
    if isinstance(node, Leaf):
        return [(list(prefix), node.posterior)]
    return (enumerate_paths(node.left, prefix + ((node.params, True),))
            + enumerate_paths(node.right, prefix + ((node.params, False),)))


def path_posterior(paths, a, x, y, bg=BG):
    """Posterior of the unique path whose every predicate holds at (x, y)."""
    hits = [post for preds, post in paths
            if all((brute_feature(a, x, y, s.u, s.v, bg) < s.theta) == left for s, left in preds)]
    assert len(hits) == 1, f"{len(hits)} leaves claim pixel ({x}, {y})"
    return hits[0]


def bilateral_oracle(prob, depth, window, sigma_r, sigma_s, max_diff):
    """Direct weighted-mean evaluation with math.exp at every neighbor.

    Returns the filtered raster and, per pixel, the (min, max) of the
    probabilities that entered the mean.
    """
    p, d = prob.tolist(), depth.tolist()
    h, w = len(p), len(p[0])
    half = window // 2
    out = [row[:] for row in p]
    bounds = [[(v, v) for v in row] for row in p]
    for y in range(h):
        for x in range(w):
            if d[y][x] == 0:
                continue
            num = den = 0.0
            used = []
            for yy in range(y - half, y + half + 1):
                for xx in range(x - half, x + half + 1):
                    if not (0 <= xx < w and 0 <= yy < h) or d[yy][xx] == 0:
                        continue
                    r = abs(d[yy][xx] - d[y][x])
                    if r > max_diff:
                        continue
                    s2 = (xx - x) ** 2 + (yy - y) ** 2
                    wt = math.exp(-r * r / (2 * sigma_r ** 2)) * math.exp(-s2 / (2 * sigma_s ** 2))
                    num += wt * p[yy][xx]
                    den += wt
                    used.append(p[yy][xx])
            out[y][x] = num / den
            bounds[y][x] = (min(used), max(used))
    return np.array(out), bounds


def sweep_oracle(probs, truths, step=0.01):
    """Re-scan every boundary with per-pixel loops; ties keep the first."""
    k = int(round(1 / step))
    best_b, best_f, curve = None, -1.0, []
    for i in range(1, k):
        b = round(i * step, 10)
        tp = fp = fn = 0
        for p, t in zip(probs, truths):
            for pv, tv in zip(np.ravel(p).tolist(), np.ravel(t).tolist()):
                pred = pv >= b
                tp += pred and tv == 1
                fp += pred and tv == 0
                fn += (not pred) and tv == 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        curve.append((b, prec, rec, f))
        if f > best_f:
            best_b, best_f = b, f
    return best_b, best_f, curve


def confusion_oracle(pred, truth):
    tp = fp = fn = tn = 0
    for pv, tv in zip(np.ravel(pred).tolist(), np.ravel(truth).tolist()):
        if pv and tv:
            tp += 1
        elif pv:
            fp += 1
        elif tv:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn
