"""Dataset container, CSV ingestion, scaling, random splits and PCA."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when input data violates a dataset contract."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with binary labels and stable row identifiers."""

    features: np.ndarray
    labels: np.ndarray
    row_ids: np.ndarray
    feature_names: tuple[str, ...]
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.labels).astype(np.int64).ravel()
        ids = np.asarray(self.row_ids).astype(np.int64).ravel()
        if not (X.shape[0] == y.shape[0] == ids.shape[0]):
            raise DataError(
                f"row count mismatch: features {X.shape[0]}, labels {y.shape[0]}, "
                f"row_ids {ids.shape[0]}")
        if y.size and not np.isin(y, (0, 1)).all():
            raise DataError("non-binary label values: %s" % sorted(set(np.unique(y)) - {0, 1}))
        if np.unique(ids).size != ids.size:
            raise DataError("row_ids are not unique")
        if not np.isfinite(X).all():
            raise DataError("non-finite feature values")
        names = tuple(self.feature_names)
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
        for arr in (X, y, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "row_ids", ids)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, mask_or_index) -> "Dataset":
        idx = np.asarray(mask_or_index)
        return Dataset(self.features[idx], self.labels[idx], self.row_ids[idx],
                       self.feature_names, self.name)

    def select_ids(self, row_ids) -> "Dataset":
        """Rows whose id is in ``row_ids``, kept in this dataset's order."""
        return self.subset(np.isin(self.row_ids, np.asarray(row_ids)))

    def with_features(self, features, feature_names=None) -> "Dataset":
        names = feature_names if feature_names is not None else self.feature_names
        return Dataset(features, self.labels, self.row_ids, tuple(names), self.name)

    def class_counts(self) -> tuple[int, int]:
        return int((self.labels == 0).sum()), int((self.labels == 1).sum())

    def to_frame(self, label_column: str = "label") -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        df.insert(0, "row_id", self.row_ids)
        df[label_column] = self.labels
        return df


def load_csv(path, label_column: str, name: str | None = None, id_column: str | None = None):
    """Read a headed CSV into a :class:`Dataset`.

    Rows with missing or non-numeric values are dropped and counted.
    Row ids follow file row order unless ``id_column`` names a column.

    Returns
    -------
    (Dataset, int)
        The dataset and the number of dropped rows.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    df = pd.read_csv(path, encoding="utf-8")
    if label_column not in df.columns:
        raise DataError(f"label column {label_column!r} not in {list(df.columns)}")
    ids = (df.pop(id_column).to_numpy() if id_column else np.arange(len(df)))
    raw_labels = pd.to_numeric(df.pop(label_column), errors="coerce")
    feats = df.apply(pd.to_numeric, errors="coerce")
    keep = feats.notna().all(axis=1).to_numpy() & raw_labels.notna().to_numpy()
    dropped = int((~keep).sum())
    if dropped:
        logger.info("%s: dropped %d rows with missing values", path.name, dropped)
    if not keep.any():
        raise DataError(f"all {len(df)} rows dropped from {path}")
    labels = raw_labels.to_numpy()[keep]
    bad = sorted(set(np.unique(labels)) - {0, 1})
    if bad:
        raise DataError(f"non-binary label values {bad} in column {label_column!r}")
    ds = Dataset(feats.to_numpy(dtype=float)[keep], labels.astype(np.int64), ids[keep],
                 tuple(str(c) for c in feats.columns), name or path.stem)
    return ds, dropped


@dataclass(frozen=True)
class Scaling:
    """Per-column z-score parameters; ``constant`` flags zero-variance columns."""

    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = (X - self.mean) / self.scale
        out[..., self.constant] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Scaling":
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float),
                   np.asarray(d["constant"], bool))


def standardize(d: Dataset):
    """Z-score every column (population variance). Returns ``(Dataset, Scaling)``."""
    if len(d) == 0:
        raise DataError("cannot standardize an empty dataset")
    X = d.features
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # columns that are constant up to rounding noise
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(constant, 1.0, std)
    sc = Scaling(mean, scale, constant)
    return d.with_features(sc.apply(X)), sc


@dataclass(frozen=True)
class SplitPair:
    part_a: Dataset
    part_b: Dataset
    seed: int


def split_random(d: Dataset, fraction: float = 0.5, seed: int = 0,
                 stratify: bool = False) -> SplitPair:
    """Random disjoint split; ``part_a`` gets ``floor(fraction * n)`` rows.

    With ``stratify`` each class is split separately (``floor(fraction * n_c)``
    rows of class ``c`` go to ``part_a``), so both parts keep the class ratio.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(d)
    if n < 2:
        raise DataError("need at least 2 rows to split")
    rng = np.random.default_rng(seed)
    if stratify:
        take = []
        for c in (0, 1):
            idx = np.nonzero(d.labels == c)[0]
            idx = idx[rng.permutation(idx.size)]
            take.append(idx[:int(np.floor(fraction * idx.size))])
        in_a = np.zeros(n, dtype=bool)
        in_a[np.concatenate(take)] = True
        a, b = np.nonzero(in_a)[0], np.nonzero(~in_a)[0]
    else:
        perm = rng.permutation(n)
        n_a = int(np.floor(fraction * n))
        a = np.sort(perm[:n_a])
        b = np.sort(perm[n_a:])
    return SplitPair(d.subset(a), d.subset(b), seed)


@dataclass(frozen=True)
class PcaModel:
    """Full-rank PCA basis; ``components`` has one component per column."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def project(self, X, start: int = 0) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) @ self.components[:, start:]

    def inverse(self, Z, start: int = 0) -> np.ndarray:
        return np.asarray(Z, float) @ self.components[:, start:].T + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PcaModel":
        return cls(np.asarray(d["mean"], float), np.asarray(d["components"], float),
                   np.asarray(d["explained_variance"], float))


def pca_fit(d: Dataset) -> PcaModel:
    if len(d) == 0:
        raise DataError("cannot fit PCA on an empty dataset")
    if len(d) <= d.n_features:
        logger.warning("PCA on %d rows x %d features is rank deficient", len(d), d.n_features)
    X = d.features
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, bias=True).reshape(d.n_features, d.n_features)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # fix the sign so the largest-magnitude loading of each component is positive
    pivots = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivots, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return PcaModel(mean, vecs * signs, vals)


def pca_drop_top(m: PcaModel, d: Dataset, n_drop: int):
    """Project ``d`` onto all but the ``n_drop`` highest-variance components.

    Returns the reduced dataset and the fraction of total variance removed.
    """
    p = m.components.shape[1]
    if not 0 < n_drop < p:
        raise DataError(f"n_drop must satisfy 0 < n_drop < {p}, got {n_drop}")
    Z = m.project(d.features, start=n_drop)
    total = m.explained_variance.sum()
    frac = float(m.explained_variance[:n_drop].sum() / total) if total > 0 else 0.0
    names = tuple(f"pc{k + 1}" for k in range(n_drop, p))
    return d.with_features(Z, names), frac


def dataset_to_csv(d: Dataset, path, label_column: str = "label") -> None:
    d.to_frame(label_column).to_csv(path, index=False)


def dataset_from_csv(path, label_column: str = "label", name: str | None = None) -> Dataset:
    """Inverse of :func:`dataset_to_csv` (keeps the ``row_id`` column)."""
    ds, _ = load_csv(path, label_column, name=name, id_column="row_id")
    return ds


def preprocessing_json(scaling: Scaling, pca: PcaModel | None = None, **meta) -> str:
    doc = {"format_version": 1, "scaling": scaling.to_dict(),
           "pca": pca.to_dict() if pca is not None else None, **meta}
    return json.dumps(doc, indent=2)
