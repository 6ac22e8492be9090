import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from metadiag.features import ABSENT, FEATURES
from metadiag.labels import LABELS, LabeledPool
from metadiag.meta import (MetaError, MetaTree, ablation, confusion_matrix, evaluate,
                           extract_rules, feature_importance, predict, rebalance, rule_for,
                           run_configuration, summarize, train_tree)

GP, WM, MD = LABELS


def random_pool(n=300, seed=0, noise=0.1, families=("GBT", "MLP"), datasets=("a", "b", "c")):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, len(FEATURES)))
    y = np.where(X[:, 1] > 0.6, WM, np.where(X[:, 9] > 0.5, MD, GP)).astype(object)
    flip = rng.uniform(size=n) < noise
    y[flip] = rng.choice(LABELS, flip.sum())
    df = pd.DataFrame(X, columns=list(FEATURES))
    df["diagnosis_label"] = y
    df["dataset"] = rng.choice(datasets, n)
    df["family"] = rng.choice(families, n)
    df["generator"] = "weak"
    df["row_id"] = np.arange(n)
    return LabeledPool(df)


def balanced_pool(n_per=60, seed=0):
    pool = random_pool(6 * n_per, seed, noise=0.3)
    return rebalance(pool, seed)


def test_two_threshold_pool_depth_two():
    v = np.r_[np.linspace(0, .3, 20), np.linspace(.4, .6, 20), np.linspace(.7, 1, 20)]
    df = pd.DataFrame(0.5, index=range(60), columns=list(FEATURES))
    df["rFN"] = v
    df["diagnosis_label"] = [GP] * 20 + [MD] * 20 + [WM] * 20
    pool = LabeledPool(df)
    t = train_tree(pool, min_leaf=1)
    assert t.depth == 2
    assert (predict(t, pool) == pool.y).all()
    rules = extract_rules(t)
    assert len(rules) <= 4 and all(1 <= len(r.conditions) <= 2 for r in rules)
    assert feature_importance(t)["rFN"] == pytest.approx(1.0)


def _hand_tree():
    """WM when rFN > 0.17 and rate_dist_gt <= 0.435, else GP / MD."""
    names = FEATURES
    f = {n: i for i, n in enumerate(names)}
    feature = np.array([f["rFN"], -1, f["rate_dist_gt"], -1, -1])
    threshold = np.array([0.17, 0, 0.435, 0, 0])
    left = np.array([1, -1, 3, -1, -1])
    right = np.array([2, -1, 4, -1, -1])
    counts = np.array([[30, 30, 30], [25, 2, 3], [5, 28, 27], [1, 26, 2], [4, 2, 25]], float)
    return MetaTree(feature, threshold, left, right, counts, np.array([1.0, 0, 0.5, 0, 0]),
                    names, 0, 18, 5)


def test_table_style_rule():
    t = _hand_tree()
    z = {f: 0.0 for f in FEATURES}
    z.update(rFN=0.3, rate_dist_gt=0.2)
    assert predict(t, z) == WM
    r = rule_for(t, z)
    assert r.text() == "WM: (rFN>0.17)&(rate dist gt<=0.435)"
    assert r.matches(z)


def test_threshold_goes_left():
    t = _hand_tree()
    z = {f: 0.0 for f in FEATURES}
    z["rFN"] = 0.17
    assert predict(t, z) == GP
    z.update(rFN=0.5, rate_dist_gt=0.435)
    assert predict(t, z) == WM


def test_missing_feature_and_absent_marker():
    t = _hand_tree()
    z = {f: 0.0 for f in FEATURES}
    z["proximity"] = ABSENT
    assert predict(t, z) == GP
    del z["rFN"]
    with pytest.raises(MetaError):
        predict(t, z)


def _rule_consistency(t, pool):
    rules = extract_rules(t)
    pred = predict(t, pool)
    for i, row in enumerate(pool.frame[list(FEATURES)].to_dict(orient="records")):
        fired = [r for r in rules if r.matches(row)]
        assert len(fired) == 1
        assert fired[0].label == pred[i]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(1, 12), leaf=st.integers(1, 20))
def test_rules_agree_with_tree(seed, depth, leaf):
    pool = random_pool(200, seed)
    t = train_tree(pool, depth, leaf, seed)
    _rule_consistency(t, pool)
    assert t.depth <= depth
    assert t.counts[t.leaves].sum(axis=1).min() >= leaf
    assert t.n_leaves <= 2 ** depth


def test_rule_replay_matches_leaf_counts():
    pool = random_pool(400, 3)
    t = train_tree(pool, 8, 3)
    pred_leaf = t.apply(pool.X)
    for r in extract_rules(t):
        mask = np.array([r.matches(z) for z in pool.frame[list(FEATURES)].to_dict("records")])
        assert np.array_equal(mask, pred_leaf == r.leaf)
        got = [int((pool.y[mask] == l).sum()) for l in LABELS]
        assert got == t.counts[r.leaf].astype(int).tolist()


def test_rules_sorted_and_min_support():
    t = train_tree(random_pool(400, 4), 8, 3)
    rules = extract_rules(t)
    assert [r.support for r in rules] == sorted((r.support for r in rules), reverse=True)
    assert all(r.support >= 20 for r in extract_rules(t, min_support=20))


def test_duplication_invariance():
    pool = balanced_pool()
    doubled = LabeledPool(pd.concat([pool.frame, pool.frame], ignore_index=True)
                          .drop(columns="profile_id"))
    a = train_tree(rebalance(pool, 1), 18, 1, 1)
    b = train_tree(rebalance(doubled, 1), 18, 1, 1)
    assert np.array_equal(a.feature, b.feature)
    assert np.array_equal(a.threshold, b.threshold)


def test_importance_normalised():
    imp = feature_importance(train_tree(random_pool(300, 5)))
    assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)
    assert set(imp) == set(FEATURES)


def test_deterministic_serialisation():
    pool = random_pool(300, 6)
    a = train_tree(rebalance(pool, 2), seed=2).to_json()
    b = train_tree(rebalance(pool, 2), seed=2).to_json()
    assert a == b
    t = MetaTree.from_json(a)
    assert (t.predict(pool.X) == train_tree(rebalance(pool, 2), seed=2).predict(pool.X)).all()
    assert json.loads(a)["metadata"]["depth"] == t.depth


def test_rebalance():
    pool = random_pool(300, 7)
    r = rebalance(pool, 0)
    c = r.counts()
    assert len(set(c.values())) == 1 and c[GP] == min(pool.counts().values())
    single = pool.where(pool.y == GP)
    with pytest.raises(MetaError):
        rebalance(single)


def test_empty_pool_rejected():
    pool = random_pool(30, 0)
    with pytest.raises(MetaError):
        train_tree(pool.where(np.zeros(len(pool), bool)))
    with pytest.raises(MetaError):
        evaluate(_hand_tree(), pool.where(np.zeros(len(pool), bool)))


def test_perfect_and_constant_classifier():
    pool = balanced_pool()
    perfect = train_tree(pool, 18, 1)
    rep = evaluate(perfect, pool)
    if (predict(perfect, pool) == pool.y).all():
        assert rep.precision.tolist() == [1, 1, 1] and rep.recall.tolist() == [1, 1, 1]
    const = train_tree(pool, max_depth=1, min_leaf=len(pool))   # a single leaf
    rep = evaluate(const, pool)
    assert sorted(rep.recall.tolist()) == [0, 0, 1]
    assert rep.accuracy == pytest.approx(1 / 3)


def test_precision_recall_from_confusion():
    pool = random_pool(500, 8)
    t = train_tree(pool.where(np.arange(500) < 300), 6, 5)
    test = pool.where(np.arange(500) >= 300)
    rep = evaluate(t, test)
    pred = predict(t, test)
    for k, l in enumerate(LABELS):
        tp = np.sum((pred == l) & (test.y == l))
        assert rep.recall[k] == pytest.approx(tp / np.sum(test.y == l))
        assert rep.precision[k] == pytest.approx(tp / max(1, np.sum(pred == l)))
    assert np.array_equal(rep.confusion, confusion_matrix(test.y, pred))


def test_configurations():
    pool = random_pool(900, 9)
    reps = run_configuration(pool, "pooled_split", seeds=range(5))
    assert len(reps) == 5
    s = summarize(reps)
    assert s["n_runs"] == 5 and len(s["precision_mean"]) == 3
    cf = run_configuration(pool, "cross_family")
    assert {r.metadata["partition"] for r in cf} == {"GBT->MLP", "MLP->GBT"}
    cd = run_configuration(pool, "cross_dataset_small", held_out=["b"])
    assert cd[0].metadata["partition"] == "held_out=b"
    cr = run_configuration(pool, "cross_dataset_random", seeds=(0, 1))
    assert len(cr) == 2
    with pytest.raises(MetaError):
        run_configuration(random_pool(300, 1, families=("GBT",)), "cross_family")
    with pytest.raises(MetaError):
        run_configuration(pool, "everything")


def test_ablation_structure():
    pool = random_pool(900, 10)
    df = ablation(pool, seeds=(0, 1), max_depth=8)
    assert len(df) == 2 * (len(FEATURES) + 1)
    assert sorted(df["removed_feature"].unique()[1:]) == sorted(FEATURES)
    last = df[df["n_remaining"] == 0]
    assert np.allclose(last["accuracy"], 1 / 3)
    again = ablation(pool, seeds=(0, 1), max_depth=8)
    pd.testing.assert_frame_equal(df, again)
