"""Array-backed binary regression tree shared by the booster and the forest."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class Tree:
    """Node ``i`` is a leaf when ``feature[i] == -1``.

    Internal nodes send a row left when ``x[feature] < threshold``, which is
    the same as ``bin(x) <= bin_id`` under the fit-time cuts. ``value`` holds
    the leaf weight (unscaled by any learning rate); ``cover`` the number of
    training rows that reached the node; ``G``/``H`` gradient and hessian sums.
    """

    feature: np.ndarray
    bin_id: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    G: np.ndarray
    H: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def leaf_weights(self) -> np.ndarray:
        return self.value[self.is_leaf]

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))

        return rec(0)

    def used_features(self) -> set[int]:
        return set(int(f) for f in self.feature if f != LEAF)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of raw feature matrix ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.intp)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def apply_binned(self, binned) -> np.ndarray:
        node = np.zeros(len(binned), dtype=np.intp)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while len(active):
            nd = node[active]
            go_left = binned[active, self.feature[nd]] <= self.bin_id[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, i: int = 0) -> dict:
        node = {"cover": float(self.cover[i]), "G": float(self.G[i]), "H": float(self.H[i])}
        if self.feature[i] == LEAF:
            node["weight"] = float(self.value[i])
            return node
        node.update(
            feature=int(self.feature[i]),
            bin=int(self.bin_id[i]),
            threshold=float(self.threshold[i]),
            value=float(self.value[i]),
            left=self.to_dict(int(self.left[i])),
            right=self.to_dict(int(self.right[i])),
        )
        return node

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        b = TreeBuilder()

        def rec(node):
            i = b.add(node["cover"], node["G"], node["H"], node.get("weight", node.get("value", 0.0)))
            if "feature" in node:
                left = rec(node["left"])
                right = rec(node["right"])
                b.set_split(i, node["feature"], node["bin"], node["threshold"], left, right)
            return i

        rec(doc)
        return b.build()


class TreeBuilder:
    """Growable node store used while a tree is being fitted."""

    def __init__(self):
        self.cols = {k: [] for k in ("feature", "bin_id", "threshold", "left", "right", "value", "cover", "G", "H")}

    def add(self, cover, G, H, value=0.0) -> int:
        c = self.cols
        for k, v in (("feature", LEAF), ("bin_id", 0), ("threshold", np.nan), ("left", -1), ("right", -1)):
            c[k].append(v)
        c["value"].append(float(value))
        c["cover"].append(float(cover))
        c["G"].append(float(G))
        c["H"].append(float(H))
        return len(c["feature"]) - 1

    def set_split(self, i, feature, bin_id, threshold, left, right):
        c = self.cols
        c["feature"][i], c["bin_id"][i], c["threshold"][i] = int(feature), int(bin_id), float(threshold)
        c["left"][i], c["right"][i] = int(left), int(right)

    def set_value(self, i, value):
        self.cols["value"][i] = float(value)

    def build(self) -> Tree:
        c = self.cols
        return Tree(
            feature=np.array(c["feature"], dtype=np.intp),
            bin_id=np.array(c["bin_id"], dtype=np.intp),
            threshold=np.array(c["threshold"], dtype=float),
            left=np.array(c["left"], dtype=np.intp),
            right=np.array(c["right"], dtype=np.intp),
            value=np.array(c["value"], dtype=float),
            cover=np.array(c["cover"], dtype=float),
            G=np.array(c["G"], dtype=float),
            H=np.array(c["H"], dtype=float),
        )
