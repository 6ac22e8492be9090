"""Exact K-nearest-neighbour search and Euclidean minimum spanning trees."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .data import Dataset

logger = logging.getLogger(__name__)

MST_MAX_ROWS = 20000
_CHUNK_CELLS = 2_000_000


class NeighborhoodError(ValueError):
    pass


def default_k(n_rows: int, fraction: float = 0.05, floor: int = 5) -> int:
    """``floor(fraction * n_rows)``, never below ``floor`` nor above ``n_rows``."""
    return int(min(n_rows, max(floor, int(np.floor(fraction * n_rows)))))


def pairwise_distances(A, B) -> np.ndarray:
    """Euclidean distances from every row of ``A`` to every row of ``B``.

    Differences are taken explicitly (no dot-product expansion) and summed
    the same way as in the MST builders, so equal distances tie exactly.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, _CHUNK_CELLS // max(1, B.shape[0] * B.shape[1]))
    for s in range(0, A.shape[0], step):
        diff = A[s:s + step, None, :] - B[None, :, :]
        out[s:s + step] = np.sqrt((diff ** 2).sum(axis=-1))
    return out


@dataclass(frozen=True)
class NeighborSet:
    """Neighbours ordered by distance, ties by ascending row id."""

    row_ids: np.ndarray
    distances: np.ndarray
    positions: np.ndarray
    k: int

    def __len__(self):
        return len(self.row_ids)


class KnnIndex:
    """Brute-force exact KNN over an immutable dataset."""

    def __init__(self, d: Dataset, exclude_self: bool = True):
        if len(d) == 0:
            raise NeighborhoodError("cannot index an empty dataset")
        self.dataset = d
        self.exclude_self = exclude_self
        self._by_id = np.argsort(d.row_ids, kind="stable")
        self._pos_of_id = {int(r): i for i, r in enumerate(d.row_ids)}

    def __len__(self):
        return len(self.dataset)

    def position(self, row_id) -> int | None:
        return self._pos_of_id.get(int(row_id))

    def distances(self, X) -> np.ndarray:
        return pairwise_distances(X, self.dataset.features)

    def neighbors_from_distances(self, dist_row, k: int, row_id=None) -> NeighborSet:
        if k <= 0:
            raise NeighborhoodError(f"K must be >= 1, got {k}")
        order = self._by_id[np.argsort(dist_row[self._by_id], kind="stable")]
        if self.exclude_self and row_id is not None:
            own = self.position(row_id)
            if own is not None:
                order = order[order != own]
        pos = order[:k]
        return NeighborSet(self.dataset.row_ids[pos], dist_row[pos], pos, k)

    def query(self, x, k: int, row_id=None) -> NeighborSet:
        x = np.asarray(x, float).ravel()
        if x.shape[0] != self.dataset.n_features:
            raise NeighborhoodError("query dimension does not match the index")
        return self.neighbors_from_distances(self.distances(x)[0], k, row_id)


def neighbor_scale(d: Dataset, k: int | None = None) -> float:
    """Median over rows of the mean distance to the ``k`` nearest other rows.

    Dividing the features by this value puts datasets of different size and
    dimension on a comparable distance scale.
    """
    n = len(d)
    if n < 2:
        raise NeighborhoodError("need at least 2 rows")
    k = min(n - 1, k if k is not None else default_k(n))
    X = d.features
    out = np.empty(n)
    step = max(1, _CHUNK_CELLS // max(1, n * X.shape[1]))
    for s in range(0, n, step):
        D = pairwise_distances(X[s:s + step], X)
        D[np.arange(D.shape[0]), np.arange(s, s + D.shape[0])] = np.inf
        out[s:s + step] = np.partition(D, k - 1, axis=1)[:, :k].mean(axis=1)
    med = float(np.median(out))
    if med <= 0:
        raise NeighborhoodError("neighbour distances are all zero (duplicated rows?)")
    return med


def build_knn_index(d: Dataset, exclude_self: bool = True) -> KnnIndex:
    return KnnIndex(d, exclude_self)


def query_knn(idx: KnnIndex, x, k: int, row_id=None) -> NeighborSet:
    return idx.query(x, k, row_id)


# minimum spanning tree ------------------------------------------------------

class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def _prim(X) -> np.ndarray:
    n = X.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    link = np.full(n, -1)
    edges = np.empty((n - 1, 3))
    cur = 0
    in_tree[0] = True
    for k in range(n - 1):
        d = np.sqrt(((X - X[cur]) ** 2).sum(axis=1))
        closer = (~in_tree) & (d < best)
        best[closer] = d[closer]
        link[closer] = cur
        cand = np.where(in_tree, np.inf, best)
        cur = int(np.argmin(cand))
        in_tree[cur] = True
        edges[k] = (link[cur], cur, best[cur])
    return edges


def _kruskal(X) -> np.ndarray:
    n = X.shape[0]
    i, j = np.triu_indices(n, k=1)
    w = np.sqrt(((X[i] - X[j]) ** 2).sum(axis=1))
    order = np.lexsort((j, i, w))
    uf = _UnionFind(n)
    edges = []
    for e in order:
        a, b = int(i[e]), int(j[e])
        if uf.union(a, b):
            edges.append((a, b, w[e]))
            if len(edges) == n - 1:
                break
    return np.asarray(edges, float).reshape(-1, 3)


class MstGraph:
    """Spanning tree over dataset positions; edges are ``(pos_a, pos_b, distance)``."""

    def __init__(self, d: Dataset, edges):
        self.dataset = d
        edges = np.asarray(edges, float).reshape(-1, 3)
        self.a = edges[:, 0].astype(np.int64)
        self.b = edges[:, 1].astype(np.int64)
        self.w = edges[:, 2].copy()
        n = len(d)
        if len(self.w) != n - 1:
            raise NeighborhoodError(f"spanning tree over {n} nodes needs {n - 1} edges, got {len(self.w)}")
        self.degree = np.bincount(np.r_[self.a, self.b], minlength=n)
        self._pos_of_id = {int(r): i for i, r in enumerate(d.row_ids)}

    def __len__(self):
        return len(self.dataset)

    @property
    def total_weight(self) -> float:
        return float(self.w.sum())

    @cached_property
    def adjacency(self) -> list[np.ndarray]:
        nbrs = [[] for _ in range(len(self))]
        for a, b in zip(self.a, self.b):
            nbrs[a].append(b)
            nbrs[b].append(a)
        return [np.asarray(x, dtype=np.int64) for x in nbrs]

    def position(self, row_id) -> int:
        try:
            return self._pos_of_id[int(row_id)]
        except KeyError:
            raise NeighborhoodError(f"row id {row_id} is not in the tree") from None

    def edge_frame(self):
        import pandas as pd
        ids = self.dataset.row_ids
        return pd.DataFrame({"row_id_a": ids[self.a], "row_id_b": ids[self.b], "distance": self.w})

    # insertion of an external point ---------------------------------------

    @cached_property
    def _dendrogram(self):
        """Single-linkage merge tree of the MST edges, with binary-lifting tables."""
        n = len(self)
        order = np.lexsort((np.arange(len(self.w)), self.w))
        parent = np.arange(2 * n - 1)
        height = np.full(2 * n - 1, -np.inf)
        children = np.full((2 * n - 1, 2), -1)
        uf = _UnionFind(n)
        comp_node = list(range(n))
        nxt = n
        for e in order:
            ra, rb = uf.find(int(self.a[e])), uf.find(int(self.b[e]))
            na, nb = comp_node[ra], comp_node[rb]
            parent[na] = parent[nb] = nxt
            height[nxt] = self.w[e]
            children[nxt] = (na, nb)
            uf.union(ra, rb)
            comp_node[uf.find(ra)] = nxt
            nxt += 1
        root = 2 * n - 2
        parent[root] = root
        # leaf order from an iterative DFS gives each node a contiguous leaf range
        lo = np.zeros(2 * n - 1, dtype=np.int64)
        hi = np.zeros(2 * n - 1, dtype=np.int64)
        leaf_order = []
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if node < n:
                lo[node] = len(leaf_order)
                leaf_order.append(node)
                hi[node] = len(leaf_order)
            elif done:
                c0, c1 = children[node]
                lo[node] = min(lo[c0], lo[c1])
                hi[node] = max(hi[c0], hi[c1])
            else:
                stack.append((node, True))
                stack.append((children[node][1], False))
                stack.append((children[node][0], False))
        levels = max(1, int(np.ceil(np.log2(2 * n))))
        up = [parent]
        for _ in range(levels):
            up.append(up[-1][up[-1]])
        return np.asarray(leaf_order), lo, hi, height, up

    def insertion_neighbors(self, dist_to_all) -> np.ndarray:
        """Positions adjacent to an external point once it joins the MST.

        ``dist_to_all`` holds the distances from the new point to every tree
        node. Ties are resolved as Kruskal would with tree edges ahead of new
        edges of equal weight and new edges ordered by position.
        """
        n = len(self)
        dz = np.asarray(dist_to_all, float)
        if n == 1:
            return np.array([0])
        leaf_order, lo, hi, height, up = self._dendrogram
        rank = np.empty(n, dtype=np.int64)
        rank[np.lexsort((np.arange(n), dz))] = np.arange(n)
        # highest ancestor whose merge height does not exceed the new edge weight
        cur = np.arange(n)
        for k in range(len(up) - 1, -1, -1):
            cand = up[k][cur]
            ok = height[cand] <= dz
            cur = np.where(ok, cand, cur)
        # range minimum of rank over each cluster via a sparse table
        seq = rank[leaf_order]
        table = [seq]
        span = 1
        while 2 * span <= n:
            prev = table[-1]
            table.append(np.minimum(prev[:-span], prev[span:]))
            span *= 2
        a, b = lo[cur], hi[cur]
        length = b - a
        lev = np.floor(np.log2(length)).astype(int)
        mins = np.empty(n, dtype=np.int64)
        for L in np.unique(lev):
            sel = lev == L
            t = table[L]
            w = 1 << L
            mins[sel] = np.minimum(t[a[sel]], t[b[sel] - w])
        return np.nonzero(mins == rank)[0]


def build_mst(d: Dataset, method: str = "prim", max_rows: int = MST_MAX_ROWS, seed: int = 0) -> MstGraph:
    """Euclidean MST of ``d`` (uniformly subsampled above ``max_rows`` rows)."""
    if len(d) < 2:
        raise NeighborhoodError("an MST needs at least 2 rows")
    if len(d) > max_rows:
        keep = np.sort(np.random.default_rng(seed).choice(len(d), max_rows, replace=False))
        logger.info("MST on a %d-row subsample (seed %d) of %d rows", max_rows, seed, len(d))
        d = d.subset(keep)
    if method == "prim":
        edges = _prim(d.features)
    elif method == "kruskal":
        edges = _kruskal(d.features)
    else:
        raise NeighborhoodError(f"unknown MST method {method!r}")
    return MstGraph(d, edges)


def mst_fraction(g: MstGraph, labels, row_id) -> float:
    """Share of a member's MST neighbours carrying the other label.

    ``labels`` is aligned with the tree's dataset positions.
    """
    labels = np.asarray(labels)
    i = g.position(row_id)
    nb = g.adjacency[i]
    if nb.size == 0:
        raise NeighborhoodError(f"node {row_id} is isolated")
    return float((labels[nb] != labels[i]).mean())


def mst_fraction_external(g: MstGraph, labels, label: int, dist_to_all) -> float:
    """MST fraction of a point that is not a tree member, after inserting it."""
    nb = g.insertion_neighbors(dist_to_all)
    return float((np.asarray(labels)[nb] != label).mean())
