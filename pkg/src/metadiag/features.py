"""Local meta-features describing a classifier's behaviour around one point."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd

from .data import Dataset
from .models import GbtModel, TrainedModel
from .neighborhood import (KnnIndex, MstGraph, NeighborSet, build_knn_index, build_mst,
                           default_k)

ABSENT = -1.0

FEATURES = (
    "local_accuracy", "rTP", "rTN", "rFP", "rFN", "conf", "knn_pred_conf",
    "d_ally_gt", "d_opp_gt", "rate_dist_gt", "d_ally_pred", "d_opp_pred", "rate_dist_pred",
    "mst_frac_gt", "proximity", "local_set_cardinality_pred",
)

# names used when printing rules, e.g. "rate dist gt"
DISPLAY = {
    "local_accuracy": "local accuracy", "conf": "conf", "knn_pred_conf": "knn pred conf",
    "d_ally_gt": "D ally gt", "d_opp_gt": "D opp gt", "rate_dist_gt": "rate dist gt",
    "d_ally_pred": "D ally pred", "d_opp_pred": "D opp pred", "rate_dist_pred": "rate dist pred",
    "mst_frac_gt": "MST frac gt", "proximity": "proximity",
    "local_set_cardinality_pred": "local set cardinality pred",
}


def display_name(feature: str) -> str:
    return DISPLAY.get(feature, feature)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileVector:
    local_accuracy: float
    rTP: float
    rTN: float
    rFP: float
    rFN: float
    conf: float
    knn_pred_conf: float
    d_ally_gt: float
    d_opp_gt: float
    rate_dist_gt: float
    d_ally_pred: float
    d_opp_pred: float
    rate_dist_pred: float
    mst_frac_gt: float
    proximity: float
    local_set_cardinality_pred: float
    diagnosis_label: str | None = None

    def values(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURES])

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, row) -> "ProfileVector":
        kw = {f: float(row[f]) for f in FEATURES}
        label = row.get("diagnosis_label") if hasattr(row, "get") else None
        return cls(**kw, diagnosis_label=None if label is None or pd.isna(label) else str(label))


def confidence(y_hat):
    """``|y_hat - 0.5| / 0.5``; works elementwise on arrays."""
    y = np.asarray(y_hat, dtype=float)
    if ((y < 0) | (y > 1) | ~np.isfinite(y)).any():
        raise FeatureError("probabilities must lie in [0, 1]")
    c = np.abs(y - 0.5) / 0.5
    return float(c) if c.ndim == 0 else c


def local_confusion(neighbors: NeighborSet, labels, predicted):
    """Confusion rates over the neighbours, class 1 taken as positive.

    ``labels`` and ``predicted`` are indexed by dataset position.
    Returns ``(rTP, rTN, rFP, rFN, local_accuracy)``.
    """
    if len(neighbors) == 0:
        raise FeatureError("empty neighbourhood")
    y = np.asarray(labels)[neighbors.positions]
    p = np.asarray(predicted)[neighbors.positions]
    k = float(len(y))
    tp = np.count_nonzero((y == 1) & (p == 1)) / k
    tn = np.count_nonzero((y == 0) & (p == 0)) / k
    fp = np.count_nonzero((y == 0) & (p == 1)) / k
    fn = np.count_nonzero((y == 1) & (p == 0)) / k
    return tp, tn, fp, fn, tp + tn


def ally_opponent_distances(x_label: int, neighbors: NeighborSet, labels):
    """Mean distance to same-label and other-label neighbours.

    An empty group yields :data:`ABSENT`.
    """
    if len(neighbors) == 0:
        raise FeatureError("empty neighbourhood")
    lab = np.asarray(labels)[neighbors.positions]
    ally = lab == x_label
    d_ally = float(neighbors.distances[ally].mean()) if ally.any() else ABSENT
    d_opp = float(neighbors.distances[~ally].mean()) if (~ally).any() else ABSENT
    return d_ally, d_opp


def rate_dist(d_ally: float, d_opp: float) -> float:
    """``d_ally / (d_ally + d_opp)``; no allies gives 1.0, no opponents 0.0."""
    if d_ally == ABSENT and d_opp == ABSENT:
        raise FeatureError("both ally and opponent distances are absent")
    if d_ally == ABSENT:
        return 1.0
    if d_opp == ABSENT:
        return 0.0
    s = d_ally + d_opp
    return 0.5 if s == 0 else d_ally / s


def local_set_cardinality(dist_row, predicted, x_pred_label: int):
    """Share of reference points closer to the query than its nearest opponent.

    Opponents are reference points whose predicted label differs from
    ``x_pred_label``. Returns ``(value, no_opponent_flag)``.
    """
    dist_row = np.asarray(dist_row, float)
    opp = np.asarray(predicted) != x_pred_label
    if not opp.any():
        return 1.0, True
    nearest = dist_row[opp].min()
    return float(np.count_nonzero(dist_row < nearest) / dist_row.size), False


def proximity(model: TrainedModel, x, neighbors: NeighborSet, d: Dataset | None = None,
              leaves=None) -> float:
    """Mean fraction of trees in which a neighbour shares the query's leaf.

    Neighbour leaves come from ``leaves`` (precomputed leaf matrix of the
    reference set) or else from the reference dataset ``d``. Non-tree
    models give :data:`ABSENT`.
    """
    if not isinstance(model, GbtModel):
        return ABSENT
    if len(neighbors) == 0:
        raise FeatureError("empty neighbourhood")
    xl = model.apply(np.asarray(x, float).reshape(1, -1))[0]
    if leaves is not None:
        nl = leaves[neighbors.positions]
    elif d is not None:
        nl = model.apply(d.features[neighbors.positions])
    else:
        raise FeatureError("proximity needs the reference dataset or its leaf matrix")
    return float((nl == xl).mean())


class ProfileContext:
    """Everything derived from the reference (training) split and the model.

    Built once, then used to profile any number of query points.
    """

    def __init__(self, train: Dataset, model: TrainedModel, k: int | None = None,
                 mst: MstGraph | None = None, index: KnnIndex | None = None):
        self.train = train
        self.model = model
        self.k = k if k is not None else default_k(len(train))
        self.index = index or build_knn_index(train)
        self.mst = mst or build_mst(train)
        p0 = model.predict_proba(train.features)
        self.pred = np.where(p0 > 0.5, 0, 1)
        self.conf = confidence(p0)
        self.leaves = model.apply(train.features) if isinstance(model, GbtModel) else None
        # tree positions may refer to a subsample of ``train``
        self._mst_labels = self.mst.dataset.labels
        self._mst_pos = (np.arange(len(train)) if len(self.mst) == len(train)
                         else np.array([self.index.position(r) for r in self.mst.dataset.row_ids]))

    def profile(self, x, y: int, row_id=None, dist_row=None, p0=None) -> ProfileVector:
        x = np.asarray(x, float).ravel()
        if dist_row is None:
            dist_row = self.index.distances(x)[0]
        if p0 is None:
            p0 = self.model.predict_proba(x)
        nb = self.index.neighbors_from_distances(dist_row, self.k, row_id)
        tp, tn, fp, fn, acc = local_confusion(nb, self.train.labels, self.pred)
        x_pred = 0 if p0 > 0.5 else 1
        dag, dog = ally_opponent_distances(int(y), nb, self.train.labels)
        dap, dop = ally_opponent_distances(x_pred, nb, self.pred)
        mst_row = dist_row[self._mst_pos]
        own = None if row_id is None else self.index.position(row_id)
        if own is not None and len(self.mst) == len(self.train):
            nbrs = self.mst.adjacency[own]
        else:
            nbrs = self.mst.insertion_neighbors(mst_row)
        mst_frac = float((self._mst_labels[nbrs] != int(y)).mean())
        prox = proximity(self.model, x, nb, leaves=self.leaves)
        lsc, _ = local_set_cardinality(dist_row, self.pred, x_pred)
        return ProfileVector(
            local_accuracy=acc, rTP=tp, rTN=tn, rFP=fp, rFN=fn,
            conf=confidence(p0), knn_pred_conf=float(self.conf[nb.positions].mean()),
            d_ally_gt=dag, d_opp_gt=dog, rate_dist_gt=rate_dist(dag, dog),
            d_ally_pred=dap, d_opp_pred=dop, rate_dist_pred=rate_dist(dap, dop),
            mst_frac_gt=mst_frac, proximity=prox, local_set_cardinality_pred=lsc)

    def profiles(self, queries: Dataset) -> pd.DataFrame:
        """Profile every row of ``queries``; one row per point, fixed column order."""
        rows = []
        step = max(1, 1_000_000 // max(1, len(self.train) * self.train.n_features))
        for s in range(0, len(queries), step):
            block = queries.features[s:s + step]
            D = self.index.distances(block)
            P = self.model.predict_proba(block)
            for j in range(block.shape[0]):
                i = s + j
                pv = self.profile(block[j], int(queries.labels[i]), int(queries.row_ids[i]), D[j],
                                  float(P[j]))
                rows.append(pv.values())
        df = pd.DataFrame(np.asarray(rows).reshape(-1, len(FEATURES)), columns=list(FEATURES))
        df.insert(0, "row_id", queries.row_ids)
        return df


def extract_profile(x, y, model: TrainedModel, idx: KnnIndex, mst: MstGraph, k: int,
                    row_id=None) -> ProfileVector:
    """Profile of one point against the reference set held by ``idx``."""
    ctx = ProfileContext(idx.dataset, model, k=k, mst=mst, index=idx)
    return ctx.profile(x, y, row_id)


def profiles_to_csv(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, float_format="%.10g")


def profiles_from_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [f for f in FEATURES if f not in df.columns]
    if missing:
        raise FeatureError(f"profile file lacks columns {missing}")
    return df


def profiles_to_json(df: pd.DataFrame, **metadata) -> str:
    return json.dumps({"metadata": metadata, "columns": list(df.columns),
                       "rows": df.to_dict(orient="records")}, default=float)
