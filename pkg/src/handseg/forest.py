"""Decision forest model types.

A tree is stored flat: node ``i`` is a split when ``left[i] >= 0`` and a
leaf otherwise. Split nodes send a pixel to ``left[i]`` when its feature is
strictly below ``theta[i]``. Leaves carry the smoothed foreground posterior
and the number of training samples that reached them.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Union

import numpy as np

from .features import SplitParams
from .raster import BACKGROUND_DEPTH

__all__ = ["TrainConfig", "Leaf", "Split", "TreeNode", "Tree", "Forest", "SPLIT_CONVENTION", "LOG_BASE"]

#: Serialized with every forest so readers can reject foreign conventions.
SPLIT_CONVENTION = "feature<theta:left"
LOG_BASE = 2


@dataclass(frozen=True)
class TrainConfig:
    """Forest training knobs.

    ``images_per_tree=None`` uses every image of the dataset for each tree.
    """

    num_trees: int = 3
    max_depth: int = 20
    images_per_tree: int | None = None
    pixels_per_image: int = 2000
    candidates_per_node: int = 100
    thresholds_per_candidate: int = 20
    offset_range: float = 120000.0
    min_samples_leaf: int = 20
    purity_stop: float = 0.99
    rng_seed: int = 0
    background_depth: int = BACKGROUND_DEPTH

    def __post_init__(self):
        for name in ("num_trees", "pixels_per_image", "candidates_per_node",
                     "thresholds_per_candidate", "min_samples_leaf"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.images_per_tree is not None and self.images_per_tree < 1:
            raise ValueError("images_per_tree must be >= 1")
        if not 0.5 < self.purity_stop <= 1.0:
            raise ValueError("purity_stop must lie in (0.5, 1.0]")
        if not self.offset_range > 0:
            raise ValueError("offset_range must be > 0")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        casts = {"offset_range": float, "purity_stop": float}
        return {f.name: casts.get(f.name, int) for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = cls.field_types()
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none", "all")):
                kw[k] = None
            else:
                kw[k] = known[k](v)
        return cls(**kw)


class Leaf(NamedTuple):
    posterior: float
    support: int = 0


class Split(NamedTuple):
    params: SplitParams
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


class Tree:
    """One decision tree in flat array form."""

    def __init__(self, left, right, u, v, theta, posterior, support):
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.u = np.asarray(u, dtype=np.float64).reshape(-1, 2)
        self.v = np.asarray(v, dtype=np.float64).reshape(-1, 2)
        self.theta = np.asarray(theta, dtype=np.float64)
        self.posterior = np.asarray(posterior, dtype=np.float64)
        self.support = np.asarray(support, dtype=np.int64)
        n = len(self.left)
        if n == 0:
            raise ValueError("a tree needs at least one node")
        for name in ("right", "u", "v", "theta", "posterior", "support"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"tree array {name!r} has length {len(getattr(self, name))}, expected {n}")
        is_split = self.left >= 0
        if np.any(self.right[is_split] < 0) or np.any(self.left[is_split] >= n) or np.any(self.right[is_split] >= n):
            raise ValueError("split node with invalid child index")
        leaves = ~is_split
        if np.any(self.posterior[leaves] < 0) or np.any(self.posterior[leaves] > 1):
            raise ValueError("leaf posterior outside [0, 1]")

    def __len__(self) -> int:
        return len(self.left)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def params(self, i: int) -> SplitParams:
        return SplitParams(tuple(self.u[i]), tuple(self.v[i]), self.theta[i])

    def depth(self) -> int:
        """Length of the longest root-to-leaf path (a lone leaf has depth 0)."""
        best, stack = 0, [(0, 0)]
        while stack:
            i, d = stack.pop()
            if self.left[i] < 0:
                best = max(best, d)
            else:
                stack.append((int(self.left[i]), d + 1))
                stack.append((int(self.right[i]), d + 1))
        return best

    @classmethod
    def from_nodes(cls, root: TreeNode) -> "Tree":
        """Flatten a nested Split/Leaf structure (pre-order, left first)."""
        left, right, u, v, theta, post, sup = [], [], [], [], [], [], []

        def visit(node):
            i = len(left)
            left.append(-1); right.append(-1); theta.append(0.0)
            u.append((0.0, 0.0)); v.append((0.0, 0.0))
            if isinstance(node, Leaf):
                post.append(float(node.posterior)); sup.append(int(node.support))
                return i
            post.append(0.0); sup.append(0)
            u[i], v[i], theta[i] = node.params.u, node.params.v, node.params.theta
            left[i] = visit(node.left)
            right[i] = visit(node.right)
            return i

        visit(root)
        return cls(left, right, u, v, theta, post, sup)

    def to_nodes(self, i: int = 0) -> TreeNode:
        if self.left[i] < 0:
            return Leaf(float(self.posterior[i]), int(self.support[i]))
        return Split(self.params(i), self.to_nodes(int(self.left[i])), self.to_nodes(int(self.right[i])))

    def to_dict(self) -> dict:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "u": self.u.ravel().tolist(),
            "v": self.v.ravel().tolist(),
            "theta": self.theta.tolist(),
            "posterior": self.posterior.tolist(),
            "support": self.support.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(d["left"], d["right"], d["u"], d["v"], d["theta"], d["posterior"], d["support"])

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("left", "right", "u", "v", "theta", "posterior", "support"))


@dataclass
class Forest:
    trees: list[Tree]
    config: TrainConfig = TrainConfig()
    convention: str = SPLIT_CONVENTION

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        if self.convention != SPLIT_CONVENTION:
            raise ValueError(f"unsupported split convention {self.convention!r}")

    @property
    def background_depth(self) -> int:
        return self.config.background_depth

    def __len__(self) -> int:
        return len(self.trees)

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "log_base": LOG_BASE,
            "config": self.config.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("log_base", LOG_BASE) != LOG_BASE:
            raise ValueError(f"unsupported log base {d['log_base']}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            config=TrainConfig.from_dict(d["config"]),
            convention=d.get("convention", SPLIT_CONVENTION),
        )
