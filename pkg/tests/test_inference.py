import time

import numpy as np
import pytest

from handseg.features import SplitParams
from handseg.forest import Forest, Leaf, Split, Tree
from handseg.inference import PackedForest, forest_probability, infer_map, tree_posterior
from handseg.raster import DepthMap, Roi
from oracles import enumerate_paths, path_posterior, random_nodes
from conftest import random_depth


def leaf_tree(p):
    return Tree.from_nodes(Leaf(p, 1))


def stump(u, v, theta, left_p, right_p):
    return Tree.from_nodes(Split(SplitParams(u, v, theta), Leaf(left_p), Leaf(right_p)))


def test_single_leaf_tree(rng):
    m = random_depth(rng)
    t = leaf_tree(0.7)
    assert all(tree_posterior(t, m, (x, y)) == 0.7 for x in range(8) for y in range(8))
    out = infer_map(Forest([t]), m).data
    assert np.all(out[m.valid] == 0.7) and np.all(out[~m.valid] == 0.0)


def test_zero_offsets_go_right(rng):
    m = random_depth(rng, holes=0)
    t = stump((0, 0), (0, 0), 0.0, 0.1, 0.8)
    assert all(tree_posterior(t, m, (x, y)) == 0.8 for x in range(8) for y in range(8))
    assert np.all(infer_map(Forest([t]), m).data == 0.8)


def test_random_trees_match_path_enumeration(rng):
    for _ in range(5):
        nodes = random_nodes(rng, 5)
        tree = Tree.from_nodes(nodes)
        m = random_depth(rng)
        paths = enumerate_paths(nodes)
        want = np.array([[path_posterior(paths, m.data, x, y) for x in range(8)] for y in range(8)])
        got_scalar = np.array([[tree_posterior(tree, m, (x, y)) for x in range(8)] for y in range(8)])
        assert np.array_equal(got_scalar, want)
        got = infer_map(Forest([tree]), m).data
        assert np.array_equal(got[m.valid], want[m.valid])


@pytest.mark.parametrize("posts,mean", [((0.2, 0.6), 0.4), ((0.0, 0.5, 1.0), 0.5)])
def test_forest_mean(posts, mean, rng):
    m = random_depth(rng, holes=0)
    f = Forest([leaf_tree(p) for p in posts])
    assert forest_probability(f, m, (2, 3)) == pytest.approx(mean, abs=1e-15)
    assert np.allclose(infer_map(f, m).data, mean, atol=1e-15)


def test_one_tree_forest_equals_tree(rng):
    nodes = random_nodes(rng, 4)
    t = Tree.from_nodes(nodes)
    m = random_depth(rng)
    assert all(forest_probability(Forest([t]), m, (x, y)) == tree_posterior(t, m, (x, y))
               for x in range(8) for y in range(8))


def test_roi_masking():
    m = DepthMap(np.full((8, 8), 900, np.uint16))
    out = infer_map(Forest([leaf_tree(0.7)]), m, Roi(3, 3, 1, 1)).data
    assert np.count_nonzero(out) == 1 and out[3, 3] == 0.7


def test_all_zero_depth_gives_zero_map():
    m = DepthMap(np.zeros((6, 9), np.uint16))
    assert not infer_map(Forest([leaf_tree(0.9)]), m).data.any()


def test_roi_inference_equals_whole_map(rng):
    f = Forest([Tree.from_nodes(random_nodes(rng, 6)) for _ in range(3)])
    m = random_depth(rng, 20, 30)
    whole = infer_map(f, m).data
    rois = [Roi(2, 3, 7, 5), Roi(15, 10, 10, 9)]
    part = infer_map(f, m, rois).data
    for r in rois:
        assert np.array_equal(part[r.slices], whole[r.slices])
    outside = np.ones_like(whole, bool)
    for r in rois:
        outside[r.slices] = False
    assert not part[outside].any()


def test_tree_order_and_range(rng):
    trees = [Tree.from_nodes(random_nodes(rng, 5)) for _ in range(4)]
    m = random_depth(rng, 12, 12)
    a = infer_map(Forest(trees), m).data
    b = infer_map(Forest(trees[::-1]), m).data
    assert np.allclose(a, b, atol=1e-15)
    assert np.all((a >= 0) & (a <= 1))


def test_stride_copies_block_value(rng):
    f = Forest([Tree.from_nodes(random_nodes(rng, 5))])
    m = random_depth(rng, 10, 10, holes=0)
    full = infer_map(f, m).data
    s2 = infer_map(f, m, stride=2).data
    assert np.array_equal(s2[::2, ::2], full[::2, ::2])
    assert np.array_equal(s2[1::2, 1::2], full[::2, ::2])


def test_packed_forest_is_reusable(rng):
    f = Forest([Tree.from_nodes(random_nodes(rng, 5)) for _ in range(2)])
    m = random_depth(rng)
    assert np.array_equal(infer_map(PackedForest(f), m).data, infer_map(f, m).data)


def test_doubling_trees_scales_linearly(rng):
    nodes = [random_nodes(np.random.default_rng(k), 12, offset=60000.0) for k in range(3)]
    f3 = Forest([Tree.from_nodes(n) for n in nodes])
    f6 = Forest(f3.trees * 2)
    m = random_depth(rng, 424, 512, holes=0.02)

    def best(f):
        p = PackedForest(f)
        infer_map(p, m)
        return min(_timed(lambda: infer_map(p, m)) for _ in range(5))

    assert best(f6) <= 2.5 * best(f3)


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0
