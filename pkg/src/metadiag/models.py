"""Base classifiers under diagnosis: gradient-boosted trees and a one-hidden-layer MLP.

Both families emit the probability of class 0. A point is predicted as
class 0 only when that probability is strictly above 0.5.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset

FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 50
    max_depth: int = 3
    learning_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ModelError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise ModelError(f"max_depth must be >= 1, got {self.max_depth}")
        if not self.learning_rate > 0:
            raise ModelError("learning_rate must be positive")

    @property
    def family(self):
        return "GBT"

    def capacity(self):
        return (self.n_trees, self.max_depth)


@dataclass(frozen=True)
class MlpConfig:
    hidden_size: int = 50
    n_iterations: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 200

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ModelError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.n_iterations < 1:
            raise ModelError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if not self.learning_rate > 0:
            raise ModelError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")

    @property
    def family(self):
        return "MLP"

    def capacity(self):
        return (self.hidden_size, self.n_iterations)


def config_from_dict(d: dict):
    d = dict(d)
    family = d.pop("family", None)
    if family == "GBT" or (family is None and "n_trees" in d):
        return GbtConfig(**d)
    if family == "MLP" or (family is None and "hidden_size" in d):
        return MlpConfig(**d)
    raise ModelError(f"cannot infer model family from {d}")


def config_to_dict(cfg) -> dict:
    return {"family": cfg.family, **asdict(cfg)}


def is_weaker(weak_cfg, base_cfg) -> bool:
    """True when ``weak_cfg`` has strictly lower capacity than ``base_cfg``."""
    if weak_cfg.family != base_cfg.family:
        return False
    w, b = weak_cfg.capacity(), base_cfg.capacity()
    return all(x <= y for x, y in zip(w, b)) and w != b


def fingerprint(d: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(d.features).tobytes())
    h.update(np.ascontiguousarray(d.labels).tobytes())
    return h.hexdigest()[:16]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_training_data(d: Dataset):
    if len(d) == 0:
        raise ModelError("cannot train on an empty dataset")
    if np.unique(d.labels).size < 2:
        raise ModelError("training data contains a single class")


class TrainedModel:
    """Common prediction surface. Subclasses are immutable after fitting."""

    family: str
    config: object
    n_features: int
    train_fingerprint: str

    def _raw_p1(self, X) -> np.ndarray:
        raise NotImplementedError

    def _as_matrix(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = X.reshape(1, -1) if single else X
        if X.shape[1] != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X, single

    def predict_proba(self, X):
        """Probability of class 0 for a vector (float) or a matrix (array)."""
        X, single = self._as_matrix(X)
        p0 = np.clip(1.0 - self._raw_p1(X), 0.0, 1.0)
        return float(p0[0]) if single else p0

    def predict(self, X):
        p0 = self.predict_proba(X)
        return np.where(np.asarray(p0) > 0.5, 0, 1) if np.ndim(p0) else int(0 if p0 > 0.5 else 1)


# gradient-boosted trees -----------------------------------------------------

@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X) -> np.ndarray:
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

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], float))


def _fit_regression_tree(X, order, grad, hess, max_depth):
    """Least-squares tree on the negative gradient, Newton-step leaf values.

    Splits are grown level by level; every feature is scanned once per level
    using the pre-sorted ``order`` so no per-node sorting happens.
    """
    n, d = X.shape
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    node_of = np.zeros(n, dtype=np.int64)
    frontier = [0]
    for _ in range(max_depth):
        if not frontier:
            break
        n_nodes = len(feature)
        active = np.zeros(n_nodes, dtype=bool)
        active[frontier] = True
        g_tot = np.bincount(node_of, weights=grad, minlength=n_nodes)
        c_tot = np.bincount(node_of, minlength=n_nodes).astype(float)
        best_gain = np.full(n_nodes, 1e-12)
        best_feat = np.full(n_nodes, -1)
        best_thr = np.zeros(n_nodes)
        for f in range(d):
            o = order[f]
            nid = node_of[o]
            keep = active[nid]
            o, nid = o[keep], nid[keep]
            s = np.argsort(nid, kind="stable")
            o, nid = o[s], nid[s]
            if o.size < 2:
                continue
            xs = X[o, f]
            cg = np.cumsum(grad[o])
            cc = np.arange(1, o.size + 1, dtype=float)
            starts = np.r_[0, np.nonzero(np.diff(nid))[0] + 1]
            grp = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, o.size]))
            base_g = np.r_[0.0, cg][starts][grp]
            base_c = starts[grp].astype(float)
            gl = cg - base_g
            cl = cc - base_c
            cand = np.nonzero((nid[:-1] == nid[1:]) & (xs[:-1] < xs[1:]))[0]
            if cand.size == 0:
                continue
            node = nid[cand]
            gl_c, cl_c = gl[cand], cl[cand]
            gr_c = g_tot[node] - gl_c
            cr_c = c_tot[node] - cl_c
            gain = gl_c ** 2 / cl_c + gr_c ** 2 / cr_c - g_tot[node] ** 2 / c_tot[node]
            # best candidate per node: sort by node, then gain descending, first position wins
            pick = np.lexsort((cand, -gain, node))
            first = np.r_[True, node[pick][1:] != node[pick][:-1]]
            win = pick[first]
            for k in win:
                nd = node[k]
                if gain[k] > best_gain[nd] * (1 + 1e-12):
                    best_gain[nd] = gain[k]
                    best_feat[nd] = f
                    best_thr[nd] = 0.5 * (xs[cand[k]] + xs[cand[k] + 1])
        new_frontier = []
        for nd in frontier:
            if best_feat[nd] < 0:
                continue
            li, ri = len(feature), len(feature) + 1
            feature[nd], threshold[nd], left[nd], right[nd] = int(best_feat[nd]), float(best_thr[nd]), li, ri
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            rows = np.nonzero(node_of == nd)[0]
            goes_left = X[rows, best_feat[nd]] <= best_thr[nd]
            node_of[rows[goes_left]] = li
            node_of[rows[~goes_left]] = ri
            new_frontier += [li, ri]
        frontier = new_frontier
    n_nodes = len(feature)
    g_sum = np.bincount(node_of, weights=grad, minlength=n_nodes)
    h_sum = np.bincount(node_of, weights=hess, minlength=n_nodes)
    value = np.where(np.asarray(feature) < 0, g_sum / (h_sum + 1e-12), 0.0)
    return RegressionTree(np.asarray(feature, np.int64), np.asarray(threshold, float),
                          np.asarray(left, np.int64), np.asarray(right, np.int64), value)


class GbtModel(TrainedModel):
    family = "GBT"

    def __init__(self, config: GbtConfig, base_score: float, trees, n_features: int,
                 train_fingerprint: str = ""):
        self.config = config
        self.base_score = float(base_score)
        self.trees = tuple(trees)
        self.n_features = int(n_features)
        self.train_fingerprint = train_fingerprint

    @property
    def n_trees(self):
        return len(self.trees)

    def apply(self, X) -> np.ndarray:
        """Leaf index of every row in every tree, shape ``(n_rows, n_trees)``."""
        X, _ = self._as_matrix(X)
        return np.column_stack([t.apply(X) for t in self.trees])

    def decision_function(self, X) -> np.ndarray:
        X, _ = self._as_matrix(X)
        F = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            F += self.config.learning_rate * t.value[t.apply(X)]
        return F

    def _raw_p1(self, X):
        return _sigmoid(self.decision_function(X))

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, "family": "GBT",
                "config": config_to_dict(self.config), "base_score": self.base_score,
                "n_features": self.n_features, "train_fingerprint": self.train_fingerprint,
                "trees": [t.to_dict() for t in self.trees]}


def train_gbt(d: Dataset, cfg: GbtConfig) -> GbtModel:
    """Gradient boosting on the logistic loss with ``cfg.n_trees`` trees."""
    _check_training_data(d)
    X, y = d.features, d.labels.astype(float)
    p1 = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    base = float(np.log(p1 / (1 - p1)))
    order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    F = np.full(len(y), base)
    trees = []
    for _ in range(cfg.n_trees):
        p = _sigmoid(F)
        tree = _fit_regression_tree(X, order, y - p, p * (1 - p), cfg.max_depth)
        F += cfg.learning_rate * tree.value[tree.apply(X)]
        trees.append(tree)
    return GbtModel(cfg, base, trees, X.shape[1], fingerprint(d))


def leaf_comembership(m: TrainedModel, x_i, x_j) -> int:
    """Number of trees in which ``x_i`` and ``x_j`` land in the same leaf."""
    if not isinstance(m, GbtModel):
        raise ModelError(f"leaf co-membership is undefined for {m.family} models")
    leaves = m.apply(np.vstack([np.asarray(x_i, float), np.asarray(x_j, float)]))
    return int((leaves[0] == leaves[1]).sum())


# multilayer perceptron ------------------------------------------------------

class MlpModel(TrainedModel):
    family = "MLP"

    def __init__(self, config: MlpConfig, W1, b1, W2, b2, train_fingerprint: str = ""):
        self.config = config
        self.W1, self.b1 = np.asarray(W1, float), np.asarray(b1, float)
        self.W2, self.b2 = np.asarray(W2, float).ravel(), float(b2)
        self.n_features = self.W1.shape[0]
        self.train_fingerprint = train_fingerprint

    def _raw_p1(self, X):
        return _sigmoid(np.tanh(X @ self.W1 + self.b1) @ self.W2 + self.b2)

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, "family": "MLP",
                "config": config_to_dict(self.config), "train_fingerprint": self.train_fingerprint,
                "W1": self.W1.tolist(), "b1": self.b1.tolist(), "W2": self.W2.tolist(), "b2": self.b2}


def train_mlp(d: Dataset, cfg: MlpConfig) -> MlpModel:
    """One tanh hidden layer, sigmoid output, Adam on mini-batches.

    ``cfg.n_iterations`` counts epochs (full passes over the data).
    """
    _check_training_data(d)
    X, y = d.features, d.labels.astype(float)
    n, p = X.shape
    rng = np.random.default_rng(cfg.seed)
    h = cfg.hidden_size
    lim1 = np.sqrt(6.0 / (p + h))
    lim2 = np.sqrt(6.0 / (h + 1))
    params = [rng.uniform(-lim1, lim1, (p, h)), rng.uniform(-lim1, lim1, h),
              rng.uniform(-lim2, lim2, h), np.zeros(1)]
    m_ = [np.zeros_like(w) for w in params]
    v_ = [np.zeros_like(w) for w in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    bs = min(cfg.batch_size, n)
    step = 0
    loss = np.nan
    for epoch in range(cfg.n_iterations):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            xb, yb = X[idx], y[idx]
            W1, b1, W2, b2 = params
            a = np.tanh(xb @ W1 + b1)
            out = _sigmoid(a @ W2 + b2[0])
            pc = np.clip(out, 1e-12, 1 - 1e-12)
            total += -np.sum(yb * np.log(pc) + (1 - yb) * np.log(1 - pc))
            dz = (out - yb) / len(idx)
            grads = [None, None, a.T @ dz, np.array([dz.sum()])]
            da = np.outer(dz, W2) * (1 - a ** 2)
            grads[0] = xb.T @ da
            grads[1] = da.sum(axis=0)
            step += 1
            for k in range(4):
                m_[k] = beta1 * m_[k] + (1 - beta1) * grads[k]
                v_[k] = beta2 * v_[k] + (1 - beta2) * grads[k] ** 2
                mh = m_[k] / (1 - beta1 ** step)
                vh = v_[k] / (1 - beta2 ** step)
                params[k] = params[k] - cfg.learning_rate * mh / (np.sqrt(vh) + eps)
        loss = total / n
        if not np.isfinite(loss) or not all(np.isfinite(w).all() for w in params):
            raise ModelError(f"MLP training diverged at epoch {epoch}: loss={loss}, "
                             f"lr={cfg.learning_rate}, hidden={h}")
    W1, b1, W2, b2 = params
    return MlpModel(cfg, W1, b1, W2, b2[0], fingerprint(d))


# shared helpers ------------------------------------------------------------

def train(d: Dataset, cfg) -> TrainedModel:
    if isinstance(cfg, GbtConfig):
        return train_gbt(d, cfg)
    if isinstance(cfg, MlpConfig):
        return train_mlp(d, cfg)
    raise ModelError(f"unknown config type {type(cfg).__name__}")


def predict_proba(m: TrainedModel, x):
    return m.predict_proba(x)


def accuracy(m: TrainedModel, d: Dataset) -> float:
    if len(d) == 0:
        raise ModelError("accuracy of an empty dataset is undefined")
    return float((m.predict(d.features) == d.labels).mean())


def model_to_json(m: TrainedModel) -> str:
    return json.dumps(m.to_dict())


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {doc.get('format_version')}")
    cfg = config_from_dict(doc["config"])
    if doc["family"] == "GBT":
        trees = [RegressionTree.from_dict(t) for t in doc["trees"]]
        return GbtModel(cfg, doc["base_score"], trees, doc["n_features"], doc["train_fingerprint"])
    if doc["family"] == "MLP":
        return MlpModel(cfg, doc["W1"], doc["b1"], doc["W2"], doc["b2"], doc["train_fingerprint"])
    raise ModelError(f"unknown family {doc['family']}")


def model_from_json(text: str) -> TrainedModel:
    return model_from_dict(json.loads(text))
