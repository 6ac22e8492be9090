import itertools
import math

import numpy as np
import pytest

from metadiag.data import Dataset
from metadiag.neighborhood import (NeighborhoodError, build_knn_index, build_mst, default_k,
                                   mst_fraction, neighbor_scale, query_knn)

from conftest import make_dataset


def brute_knn(X, ids, x, k, exclude=None):
    cand = [(math.dist(x, X[i]), int(ids[i])) for i in range(len(X)) if ids[i] != exclude]
    cand.sort()
    return cand[:k]


@pytest.mark.parametrize("seed,n,p", [(0, 300, 2), (1, 800, 5), (2, 2000, 8)])
def test_knn_matches_brute_force(seed, n, p):
    d = make_dataset(n, p, seed)
    idx = build_knn_index(d)
    rng = np.random.default_rng(seed)
    for q in range(100):
        k = int(rng.integers(1, 30))
        if q % 2:
            x = rng.normal(size=p)
            rid = None
        else:
            i = int(rng.integers(n))
            x, rid = d.features[i], int(d.row_ids[i])
        got = query_knn(idx, x, k, row_id=rid)
        want = brute_knn(d.features, d.row_ids, x, k, exclude=rid)
        assert got.row_ids.tolist() == [r for _, r in want]
        assert np.allclose(got.distances, [w for w, _ in want], rtol=0, atol=1e-12)


def test_knn_ties_broken_by_row_id():
    X = np.array([[1.0], [-1.0], [1.0], [0.0]])
    d = Dataset(X, [0, 1, 0, 1], [7, 3, 5, 9], ("a",))
    nb = query_knn(build_knn_index(d), [0.0], 3, row_id=9)
    assert nb.row_ids.tolist() == [3, 5, 7]


def test_knn_dimension_mismatch():
    idx = build_knn_index(make_dataset(10, 3))
    with pytest.raises(NeighborhoodError):
        idx.query(np.zeros(2), 3)


def test_default_k():
    assert default_k(1000) == 50
    assert default_k(60) == 5
    assert default_k(3) == 3


def _exhaustive_mst_weight(X):
    """Minimum over every labelled tree on n nodes, enumerated by Pruefer code."""
    n = len(X)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    if n == 2:
        return D[0, 1]
    seqs = np.array(list(itertools.product(range(n), repeat=n - 2)), dtype=np.int64)
    N = len(seqs)
    deg = np.ones((N, n), dtype=np.int64)
    for j in range(n - 2):
        np.add.at(deg, (np.arange(N), seqs[:, j]), 1)
    total = np.zeros(N)
    rows = np.arange(N)
    for j in range(n - 2):
        leaf = np.argmax(deg == 1, axis=1)
        total += D[leaf, seqs[:, j]]
        deg[rows, leaf] = 0
        deg[rows, seqs[:, j]] -= 1
    last = np.argsort(deg != 1, axis=1, kind="stable")[:, :2]
    total += D[last[:, 0], last[:, 1]]
    return float(total.min())


def test_pruefer_oracle_counts_trees():
    # Cayley: n^(n-2) trees; a unit simplex-like check on 4 collinear points
    X = np.arange(4.0)[:, None]
    assert _exhaustive_mst_weight(X) == pytest.approx(3.0)


@pytest.mark.parametrize("seed", range(20))
def test_mst_weight_matches_exhaustive(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 9))
    X = rng.normal(size=(n, int(rng.integers(1, 4))))
    d = Dataset(X, np.arange(n) % 2, np.arange(n), tuple(f"x{i}" for i in range(X.shape[1])))
    want = _exhaustive_mst_weight(X)
    for method in ("prim", "kruskal"):
        g = build_mst(d, method)
        assert len(g.w) == n - 1
        assert g.total_weight == pytest.approx(want, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n", [50, 500, 2000])
def test_prim_and_kruskal_agree(n):
    d = make_dataset(n, 4, seed=n)
    a, b = build_mst(d, "prim"), build_mst(d, "kruskal")
    assert a.total_weight == pytest.approx(b.total_weight, rel=1e-12)


def _connected_acyclic(g):
    n = len(g)
    seen, stack = {0}, [0]
    while stack:
        for v in g.adjacency[stack.pop()]:
            if int(v) not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return len(seen) == n and len(g.w) == n - 1


def test_mst_with_duplicates():
    X = np.array([[0.0, 0], [0, 0], [1, 0], [1, 0], [3, 3]])
    g = build_mst(Dataset(X, [0, 1, 0, 1, 0], np.arange(5), ("a", "b")))
    assert _connected_acyclic(g)
    assert sorted(g.w.tolist())[:2] == [0.0, 0.0]


def test_cross_label_edges_identity():
    d = make_dataset(400, 3, seed=4)
    g = build_mst(d)
    y = d.labels
    cross = int((y[g.a] != y[g.b]).sum())
    s = sum(g.degree[i] * mst_fraction(g, y, d.row_ids[i]) for i in range(len(d)))
    assert cross == pytest.approx(0.5 * s)


@pytest.mark.parametrize("seed", range(10))
def test_insertion_neighbors_match_rebuilt_tree(seed):
    d = make_dataset(150, 3, seed=seed)
    g = build_mst(d)
    x = np.random.default_rng(seed).normal(size=3)
    got = sorted(g.insertion_neighbors(np.sqrt(((d.features - x) ** 2).sum(1))).tolist())
    both = Dataset(np.vstack([d.features, x]), np.r_[d.labels, 0], np.arange(151), d.feature_names)
    full = build_mst(both, "kruskal")
    assert got == sorted(full.adjacency[150].tolist())


def test_neighbor_scale_uniform():
    d = make_dataset(200, 3)
    s = neighbor_scale(d)
    d2 = d.with_features(d.features * 4.0)
    assert neighbor_scale(d2) == pytest.approx(4 * s)
