"""Three-class decision-tree meta-classifier over profile vectors.

Includes rule extraction, impurity-based feature importance, evaluation
under the train/test configurations, and the feature ablation experiment.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .features import FEATURES, display_name
from .labels import LABELS, DiagnosisLabel, LabeledPool

logger = logging.getLogger(__name__)

CONFIGURATIONS = ("cross_dataset_small", "cross_dataset_random", "cross_family", "pooled_split")


class MetaError(ValueError):
    pass


def _gini(counts):
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = 1.0 - ((counts / n[..., None]) ** 2).sum(axis=-1)
    return np.where(n > 0, g, 0.0)


def rebalance(pool: LabeledPool, seed: int = 0) -> LabeledPool:
    """Undersample every class to the size of the rarest one."""
    counts = pool.counts()
    if min(counts.values()) == 0:
        raise MetaError(f"cannot rebalance, a class is absent: {counts}")
    n_min = min(counts.values())
    rng = np.random.default_rng(seed)
    y = pool.y
    keep = []
    for label in LABELS:
        idx = np.nonzero(y == label)[0]
        keep.append(idx if idx.size == n_min else rng.choice(idx, n_min, replace=False))
    return pool.where(np.isin(np.arange(len(pool)), np.concatenate(keep)))


@dataclass
class MetaTree:
    """Array-encoded CART tree; ``feature == -1`` marks a leaf.

    ``counts[i]`` holds the training class counts reaching node ``i`` in
    :data:`LABELS` order.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    impurity_decrease: np.ndarray
    feature_names: tuple = FEATURES
    seed: int = 0
    max_depth: int = 18
    min_leaf: int = 5

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> np.ndarray:
        return np.nonzero(self.feature < 0)[0]

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def depth(self) -> int:
        depth = self.node_depths()
        return int(depth.max())

    def node_depths(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return depth

    def node_label(self, node) -> str:
        # argmax with ties going to the lexicographically first label
        c = self.counts[node]
        best = [LABELS[k] for k in range(len(LABELS)) if c[k] == c.max()]
        return min(best)

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.nonzero(inner)[0]
            nd = node[rows]
            go_left = X[rows, f[rows]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X) -> np.ndarray:
        leaf_labels = {int(l): self.node_label(l) for l in self.leaves}
        return np.array([leaf_labels[int(l)] for l in self.apply(X)], dtype=object)

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            node = {"id": i, "counts": dict(zip(LABELS, map(int, self.counts[i])))}
            if self.feature[i] >= 0:
                node.update(feature=self.feature_names[self.feature[i]],
                            threshold=float(self.threshold[i]),
                            left=int(self.left[i]), right=int(self.right[i]),
                            impurity_decrease=float(self.impurity_decrease[i]))
            else:
                node["label"] = self.node_label(i)
            nodes.append(node)
        return {"format_version": 1, "features": list(self.feature_names), "labels": list(LABELS),
                "metadata": {"depth": self.depth, "leaves": self.n_leaves, "seed": self.seed,
                             "max_depth": self.max_depth, "min_leaf": self.min_leaf},
                "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc) -> "MetaTree":
        names = tuple(doc["features"])
        col = {f: i for i, f in enumerate(names)}
        nodes = sorted(doc["nodes"], key=lambda n: n["id"])
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        dec = np.zeros(n)
        counts = np.array([[nd["counts"][l] for l in LABELS] for nd in nodes], dtype=float)
        for nd in nodes:
            if "feature" in nd:
                i = nd["id"]
                feature[i] = col[nd["feature"]]
                threshold[i] = nd["threshold"]
                left[i], right[i] = nd["left"], nd["right"]
                dec[i] = nd.get("impurity_decrease", 0.0)
        md = doc.get("metadata", {})
        return cls(feature, threshold, left, right, counts, dec, names,
                   md.get("seed", 0), md.get("max_depth", 18), md.get("min_leaf", 5))

    @classmethod
    def from_json(cls, text) -> "MetaTree":
        return cls.from_dict(json.loads(text))


def _best_split(X, Y, min_leaf):
    """Best Gini split of one node: ``(gain, feature, threshold)`` or None.

    ``Y`` is the one-hot label matrix. Ties keep the lowest feature index and
    then the lowest threshold.
    """
    n = X.shape[0]
    total = Y.sum(axis=0)
    parent = n * _gini(total)
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cl = np.cumsum(Y[order], axis=0)[:-1]
        nl = np.arange(1, n)
        ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        cl = cl[ok]
        nl_ok = nl[ok]
        cr = total - cl
        child = nl_ok * _gini(cl) + (n - nl_ok) * _gini(cr)
        gain = parent - child
        k = int(np.argmax(gain))
        if gain[k] <= 1e-12:
            continue
        if best is None or gain[k] > best[0] + 1e-12:
            pos = np.nonzero(ok)[0][k]
            best = (float(gain[k]), f, 0.5 * (xs[pos] + xs[pos + 1]))
    return best


def train_tree(pool: LabeledPool, max_depth: int = 18, min_leaf: int = 5, seed: int = 0,
               features=FEATURES) -> MetaTree:
    """Greedy CART with Gini impurity over the named profile features."""
    if len(pool) == 0:
        raise MetaError("cannot train on an empty pool")
    if max_depth < 1:
        raise MetaError("max_depth must be >= 1")
    X = pool.frame[list(features)].to_numpy(dtype=float)
    Y = (pool.y[:, None] == np.asarray(LABELS)[None, :]).astype(float)
    feature, threshold, left, right, counts, dec = [], [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(Y[rows].sum(axis=0))
        dec.append(0.0)
        return len(feature) - 1

    root = new_node(np.arange(len(X)))
    stack = [(root, np.arange(len(X)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        c = counts[node]
        if depth >= max_depth or (c > 0).sum() <= 1 or len(rows) < 2 * min_leaf:
            continue
        split = _best_split(X[rows], Y[rows], min_leaf)
        if split is None:
            continue
        gain, f, thr = split
        go_left = X[rows, f] <= thr
        l_rows, r_rows = rows[go_left], rows[~go_left]
        li, ri = new_node(l_rows), new_node(r_rows)
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        dec[node] = gain
        # right child pushed first so the left subtree is numbered first
        stack.append((ri, r_rows, depth + 1))
        stack.append((li, l_rows, depth + 1))
    return MetaTree(np.asarray(feature, np.int64), np.asarray(threshold, float),
                    np.asarray(left, np.int64), np.asarray(right, np.int64),
                    np.asarray(counts, float), np.asarray(dec, float), tuple(features),
                    seed, max_depth, min_leaf)


def _profile_matrix(t: MetaTree, z) -> np.ndarray:
    if isinstance(z, LabeledPool):
        z = z.frame
    if isinstance(z, pd.DataFrame):
        missing = [f for f in t.feature_names if f not in z.columns]
        if missing:
            raise MetaError(f"profiles lack features {missing}")
        return z[list(t.feature_names)].to_numpy(dtype=float)
    if hasattr(z, "as_dict"):
        z = z.as_dict()
    if isinstance(z, dict):
        missing = [f for f in t.feature_names if f not in z or z[f] is None]
        if missing:
            raise MetaError(f"profile lacks features {missing}")
        return np.array([[float(z[f]) for f in t.feature_names]])
    return np.atleast_2d(np.asarray(z, float))


def predict(t: MetaTree, z):
    """Diagnosis for one profile (returns a label) or many (returns an array)."""
    single = not isinstance(z, (pd.DataFrame, LabeledPool)) and (
        hasattr(z, "as_dict") or isinstance(z, dict) or np.ndim(z) == 1)
    out = t.predict(_profile_matrix(t, z))
    return out[0] if single else out


# rules ----------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionRule:
    conditions: tuple          # (feature, "<=" | ">", threshold)
    label: str
    support: int
    confidence: float
    leaf: int = -1

    def matches(self, profile: dict) -> bool:
        for f, op, thr in self.conditions:
            v = float(profile[f])
            if (op == "<=" and not v <= thr) or (op == ">" and not v > thr):
                return False
        return True

    def text(self, digits: int = 3) -> str:
        short = DiagnosisLabel(self.label).short
        conj = "&".join(f"({display_name(f)}{op}{round(thr, digits):g})"
                        for f, op, thr in self.conditions)
        return f"{short}: {conj or '(always)'}"

    def to_dict(self) -> dict:
        return {"label": self.label, "support": self.support, "confidence": self.confidence,
                "leaf": self.leaf, "text": self.text(),
                "conditions": [{"feature": f, "op": op, "threshold": thr}
                               for f, op, thr in self.conditions]}


def _leaf_paths(t: MetaTree):
    stack = [(0, [])]
    while stack:
        node, path = stack.pop()
        if t.feature[node] < 0:
            yield node, path
            continue
        f, thr = int(t.feature[node]), float(t.threshold[node])
        stack.append((int(t.right[node]), path + [(f, ">", thr)]))
        stack.append((int(t.left[node]), path + [(f, "<=", thr)]))


def _simplify(t: MetaTree, path):
    """Merge repeated tests on one feature into a single interval."""
    lower, upper, order = {}, {}, []
    for f, op, thr in path:
        if f not in order:
            order.append(f)
        if op == ">":
            lower[f] = max(lower.get(f, -np.inf), thr)
        else:
            upper[f] = min(upper.get(f, np.inf), thr)
    conds = []
    for f in order:
        name = t.feature_names[f]
        if f in lower:
            conds.append((name, ">", lower[f]))
        if f in upper:
            conds.append((name, "<=", upper[f]))
    return tuple(conds)


def extract_rules(t: MetaTree, min_support: int = 0) -> list[DecisionRule]:
    """One simplified rule per leaf, most supported first."""
    rules = []
    for leaf, path in _leaf_paths(t):
        c = t.counts[leaf]
        support = int(c.sum())
        if support < min_support:
            continue
        label = t.node_label(leaf)
        conf = float(c[LABELS.index(label)] / support) if support else 0.0
        rules.append(DecisionRule(_simplify(t, path), label, support, conf, int(leaf)))
    rules.sort(key=lambda r: (-r.support, r.leaf))
    return rules


def rule_for(t: MetaTree, z) -> DecisionRule:
    """The rule of the leaf that ``z`` reaches."""
    leaf = int(t.apply(_profile_matrix(t, z))[0])
    for r in extract_rules(t):
        if r.leaf == leaf:
            return r
    raise MetaError("leaf without rule")  # pragma: no cover


def feature_importance(t: MetaTree) -> dict:
    """Total Gini decrease per feature, normalised to sum to one."""
    imp = np.zeros(len(t.feature_names))
    inner = t.feature >= 0
    np.add.at(imp, t.feature[inner], t.impurity_decrease[inner])
    s = imp.sum()
    if s > 0:
        imp = imp / s
    return dict(zip(t.feature_names, imp.tolist()))


# evaluation -----------------------------------------------------------------

@dataclass
class EvalReport:
    precision: np.ndarray
    recall: np.ndarray
    confusion: np.ndarray                   # rows true, columns predicted, LABELS order
    metadata: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        n = self.confusion.sum()
        return float(np.trace(self.confusion) / n) if n else 0.0

    def to_dict(self) -> dict:
        return {"labels": list(LABELS), "precision": self.precision.tolist(),
                "recall": self.recall.tolist(), "accuracy": self.accuracy,
                "confusion": self.confusion.astype(int).tolist(), "metadata": self.metadata}

    def row(self) -> dict:
        out = {"accuracy": self.accuracy}
        for k, l in enumerate(LABELS):
            out[f"precision_{l}"] = float(self.precision[k])
            out[f"recall_{l}"] = float(self.recall[k])
        return {**{k: v for k, v in self.metadata.items() if np.isscalar(v)}, **out}


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    idx = {l: k for k, l in enumerate(LABELS)}
    cm = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[idx[t], idx[p]] += 1
    return cm


def evaluate(t: MetaTree, test_pool: LabeledPool, **metadata) -> EvalReport:
    if len(test_pool) == 0:
        raise MetaError("empty test pool")
    cm = confusion_matrix(test_pool.y, predict(t, test_pool))
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.nan_to_num(np.diag(cm) / cm.sum(axis=0))
        rec = np.nan_to_num(np.diag(cm) / cm.sum(axis=1))
    md = {"n_test": int(len(test_pool)), "tree_depth": t.depth, "tree_leaves": t.n_leaves,
          "seed": t.seed, **metadata}
    return EvalReport(prec, rec, cm, md)


def summarize(reports) -> dict:
    """Mean and standard deviation of per-class precision/recall across runs."""
    P = np.array([r.precision for r in reports])
    R = np.array([r.recall for r in reports])
    A = np.array([r.accuracy for r in reports])
    return {"labels": list(LABELS), "n_runs": len(reports),
            "precision_mean": P.mean(axis=0).tolist(), "precision_std": P.std(axis=0).tolist(),
            "recall_mean": R.mean(axis=0).tolist(), "recall_std": R.std(axis=0).tolist(),
            "accuracy_mean": float(A.mean()), "accuracy_std": float(A.std())}


def _partitions(pool: LabeledPool, config: str, seed: int, held_out=None, n_test_datasets=None):
    """Yield ``(name, train_pool, test_pool)`` for one configuration and seed."""
    f = pool.frame
    if config == "pooled_split":
        rng = np.random.default_rng(seed)
        test = np.zeros(len(pool), dtype=bool)
        test[rng.permutation(len(pool))[:int(round(0.25 * len(pool)))]] = True
        yield "pooled_split", pool.where(~test), pool.where(test)
    elif config == "cross_family":
        fams = sorted(f["family"].unique())
        if len(fams) < 2:
            raise MetaError(f"cross_family needs two model families, pools have {fams}")
        for a in fams:
            for b in fams:
                if a != b:
                    yield f"{a}->{b}", pool.where(f["family"] == a), pool.where(f["family"] == b)
    elif config in ("cross_dataset_small", "cross_dataset_random"):
        names = sorted(f["dataset"].unique())
        if len(names) < 2:
            raise MetaError("cross-dataset configurations need at least two datasets")
        if config == "cross_dataset_random":
            k = n_test_datasets or max(1, len(names) // 2)
            held = sorted(np.random.default_rng(seed).choice(names, k, replace=False).tolist())
        else:
            held = list(held_out) if held_out else [names[-1]]
        unknown = set(held) - set(names)
        if unknown or len(held) >= len(names):
            raise MetaError(f"cannot hold out {held} from datasets {names}")
        test = f["dataset"].isin(held).to_numpy()
        yield "held_out=" + "+".join(held), pool.where(~test), pool.where(test)
    else:
        raise MetaError(f"unknown configuration {config!r}; choose from {CONFIGURATIONS}")


def run_configuration(pool: LabeledPool, config: str, seeds=(0,), max_depth: int = 18,
                      min_leaf: int = 5, balance_test: bool = True, held_out=None,
                      n_test_datasets=None, return_trees: bool = False):
    """Rebalance, train and evaluate once per seed and partition.

    Returns the list of reports, or ``(reports, trees)`` with ``return_trees``.
    """
    reports, trees = [], []
    for seed in seeds:
        for name, tr, te in _partitions(pool, config, seed, held_out, n_test_datasets):
            for p, what in ((tr, "training"), (te, "test")):
                missing = [l for l, n in p.counts().items() if n == 0]
                if missing:
                    raise MetaError(f"{config} {name}: {what} pool lacks {missing}")
            tree = train_tree(rebalance(tr, seed), max_depth, min_leaf, seed)
            test = rebalance(te, seed + 7919) if balance_test else te
            reports.append(evaluate(tree, test, configuration=config, partition=name,
                                    n_train=len(tr), seed=seed))
            trees.append(tree)
    return (reports, trees) if return_trees else reports


# ablation -------------------------------------------------------------------

def importance_order(pool: LabeledPool, seed: int = 0, max_depth: int = 18, min_leaf: int = 5):
    """Features from least to most important under a reference tree."""
    ref = train_tree(rebalance(pool, seed), max_depth, min_leaf, seed)
    imp = feature_importance(ref)
    return sorted(FEATURES, key=lambda f: (imp[f], f)), imp


def ablation(pool: LabeledPool, seeds=(0,), max_depth: int = 18, min_leaf: int = 5,
             order=None) -> pd.DataFrame:
    """Metrics as features are muted (set to zero) from least to most important.

    Each step mutes one more feature in training and test, retrains on a
    rebalanced 75% split and evaluates on the balanced remaining 25%.
    """
    if order is None:
        order, _ = importance_order(pool, seeds[0] if len(seeds) else 0, max_depth, min_leaf)
    rows = []
    for step in range(len(order) + 1):
        muted = list(order[:step])
        frame = pool.frame.copy()
        frame[muted] = 0.0
        muted_pool = LabeledPool(frame)
        for seed in seeds:
            rep = run_configuration(muted_pool, "pooled_split", (seed,), max_depth, min_leaf)[0]
            row = {"n_removed": step, "n_remaining": len(order) - step,
                   "removed_feature": order[step - 1] if step else "", "seed": seed}
            row.update({k: v for k, v in rep.row().items()
                        if k.startswith(("accuracy", "precision", "recall"))})
            rows.append(row)
    return pd.DataFrame(rows)
