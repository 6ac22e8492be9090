import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metadiag.data import (DataError, Dataset, load_csv, pca_drop_top, pca_fit, split_random,
                           standardize)

from conftest import make_dataset


def test_load_csv_drops_missing_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,2,0\n3,,1\n5,6,1\nx,1,0\n")
    d, dropped = load_csv(p, "label")
    assert dropped == 2
    assert d.features.tolist() == [[1, 2], [5, 6]]
    assert d.row_ids.tolist() == [0, 2]


def test_load_csv_rejects_non_binary(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,label\n1,0\n2,2\n")
    with pytest.raises(DataError):
        load_csv(p, "label")


def test_load_csv_missing_label_column(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,0\n")
    with pytest.raises(DataError):
        load_csv(p, "label")


def test_dataset_is_read_only():
    d = make_dataset(10)
    with pytest.raises(ValueError):
        d.features[0, 0] = 1.0


def test_duplicate_row_ids_rejected():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 1], [3, 3], ("a",))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 200), f=st.floats(0.05, 0.95), seed=st.integers(0, 10_000),
       stratify=st.booleans())
def test_split_sizes_and_partition(n, f, seed, stratify):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.normal(size=(n, 2)), rng.integers(0, 2, n), np.arange(n), ("a", "b"))
    s = split_random(d, f, seed, stratify=stratify)
    a, b = set(s.part_a.row_ids.tolist()), set(s.part_b.row_ids.tolist())
    assert a.isdisjoint(b) and a | b == set(range(n))
    if not stratify:
        assert len(a) == int(np.floor(f * n)) and len(b) == n - int(np.floor(f * n))
    else:
        for c in (0, 1):
            nc = int((d.labels == c).sum())
            assert int((s.part_a.labels == c).sum()) == int(np.floor(f * nc))


def test_split_is_seeded():
    d = make_dataset(50)
    a1 = split_random(d, 0.5, 3).part_a.row_ids
    a2 = split_random(d, 0.5, 3).part_a.row_ids
    assert np.array_equal(a1, a2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 80), p=st.integers(1, 6))
def test_standardize_idempotent(seed, n, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.1, 100, p) + rng.normal(0, 50, p)
    d = Dataset(X, np.arange(n) % 2, np.arange(n), tuple(f"x{i}" for i in range(p)))
    once, _ = standardize(d)
    twice, _ = standardize(once)
    assert np.abs(once.features - twice.features).max() < 1e-9


def test_standardize_constant_column():
    X = np.c_[np.arange(6.0), np.full(6, 4.0)]
    d, sc = standardize(Dataset(X, [0, 1] * 3, np.arange(6), ("a", "b")))
    assert sc.constant.tolist() == [False, True]
    assert np.all(d.features[:, 1] == 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(8, 80), p=st.integers(2, 7))
def test_pca_round_trip_and_variance(seed, n, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) @ rng.normal(size=(p, p))
    d = Dataset(X, np.arange(n) % 2, np.arange(n), tuple(f"x{i}" for i in range(p)))
    m = pca_fit(d)
    assert np.abs(m.inverse(m.project(X)) - X).max() < 1e-6
    fracs = [pca_drop_top(m, d, k)[1] for k in range(1, p)]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] < 1.0 or np.isclose(m.explained_variance[-1], 0)


def test_pca_drop_bounds():
    d = make_dataset(30, 3)
    m = pca_fit(d)
    for bad in (0, 3):
        with pytest.raises(DataError):
            pca_drop_top(m, d, bad)
    z, frac = pca_drop_top(m, d, 1)
    assert z.feature_names == ("pc2", "pc3") and 0 < frac < 1
