"""Agglomerative clustering of bags over the MMD^2 distance matrix."""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LINKAGES = ("average", "complete", "single")


@dataclass
class Dendrogram:
    """Merge history.  Leaves are ``0..N-1``; merge ``m`` creates node ``N + m``.

    Each merge is ``(left, right, height, size)`` with ``left < right``.
    """

    ids: list
    merges: list

    @property
    def n(self):
        return len(self.ids)

    def heights(self):
        return np.array([m[2] for m in self.merges])

    def to_json(self, path=None):
        doc = {"ids": list(self.ids),
               "merges": [[int(l), int(r), float(h), int(s)] for l, r, h, s in self.merges]}
        text = json.dumps(doc, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        merges = [(int(l), int(r), float(h), int(s)) for l, r, h, s in doc["merges"]]
        return cls(list(doc["ids"]), merges)


def _cluster_distance(d, members_a, members_b, linkage):
    block = d[np.ix_(members_a, members_b)]
    if linkage == "complete":
        return float(block.max())
    if linkage == "single":
        return float(block.min())
    # exactly rounded sum -> the value is independent of merge/summation order
    return math.fsum(block.ravel().tolist()) / (len(members_a) * len(members_b))


def agglomerate(dist, linkage="average") -> Dendrogram:
    """Hierarchical clustering of a :class:`~wsimmd.mmd.DistanceMatrix`.

    Cluster distances are recomputed from the original matrix rather than by
    Lance-Williams updates.  Among equal candidate heights the pair with the
    lexicographically smallest ``(min node id, max node id)`` merges first.
    """
    if linkage not in LINKAGES:
        raise ValidationError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    d = np.asarray(dist.values, dtype=float)
    n = d.shape[0]
    if n < 2:
        raise ValidationError("clustering needs at least two items")
    if d.shape != (n, n) or not np.all(np.isfinite(d)) or not np.array_equal(d, d.T):
        raise ValidationError("distance matrix must be square, finite and symmetric")

    # active clusters by slot; node[k] is the node id in slot k
    node = list(range(n))
    members = [[i] for i in range(n)]
    cd = d.astype(float).copy()
    np.fill_diagonal(cd, np.inf)
    active = np.ones(n, dtype=bool)
    merges = []
    for step in range(n - 1):
        sub = np.where(active[:, None] & active[None, :], cd, np.inf)
        best = sub.min()
        ii, jj = np.nonzero(np.triu(sub == best, k=1))
        cands = sorted((min(node[i], node[j]), max(node[i], node[j]), i, j)
                       for i, j in zip(ii.tolist(), jj.tolist()))
        lo, hi, i, j = cands[0]
        merges.append((lo, hi, float(best), len(members[i]) + len(members[j])))
        # new cluster lives in slot i
        members[i] = members[i] + members[j]
        node[i] = n + step
        active[j] = False
        cd[j, :] = cd[:, j] = np.inf
        for k in np.flatnonzero(active):
            if k != i:
                cd[i, k] = cd[k, i] = _cluster_distance(d, members[i], members[k], linkage)
    return Dendrogram(list(dist.ids), merges)


def cut(dendro: Dendrogram, k: int) -> np.ndarray:
    """Flat assignment into ``k`` clusters by undoing the last ``k - 1`` merges.

    Clusters are numbered ``0..k-1`` in order of their smallest leaf index.
    """
    n = dendro.n
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m, (left, right, _h, _s) in enumerate(dendro.merges[: n - k]):
        parent[find(left)] = n + m
        parent[find(right)] = n + m
    roots = [find(i) for i in range(n)]
    labels, order = np.empty(n, dtype=int), {}
    for i, r in enumerate(roots):
        if r not in order:
            order[r] = len(order)
        labels[i] = order[r]
    return labels


def write_assignment(ids, labels, path):
    with open(path, "w") as fh:
        fh.write("id,cluster\n")
        for i, c in zip(ids, labels):
            fh.write(f"{i},{int(c)}\n")
