"""Ground-truth diagnosis labels for the meta-classifier.

The dataset is first cleaned by cross-training a high-capacity model on two
random halves. On the cleaned ("easy") set, errors of a weakened model are
labelled ``WeakModel`` and errors of a model trained after removing the top
principal components are labelled ``DataMixedUp``. Correct predictions from
either run are labelled ``GoodPrediction``.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from .data import Dataset, DataError, pca_drop_top, pca_fit, split_random, standardize
from .features import FEATURES, ProfileContext
from .models import accuracy, config_to_dict, is_weaker, train

logger = logging.getLogger(__name__)


class DiagnosisLabel(str, Enum):
    GOOD = "GoodPrediction"
    WEAK = "WeakModel"
    MIXED = "DataMixedUp"

    @property
    def short(self) -> str:
        return {"GoodPrediction": "C", "WeakModel": "WM", "DataMixedUp": "MD"}[self.value]


LABELS = tuple(l.value for l in DiagnosisLabel)


class LabelGenError(RuntimeError):
    pass


class UnderfitGuardError(LabelGenError):
    """The cut model does not underfit; carries the measured curve."""

    def __init__(self, message, curve=None, check=None):
        super().__init__(message)
        self.curve = curve or []
        self.check = check


# cleaning -------------------------------------------------------------------

@dataclass
class CleaningReport:
    iterations: list = field(default_factory=list)
    final_dataset: Dataset | None = None
    converged: bool = False
    threshold: float = 0.999

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.iterations,
                            columns=["round", "size_before", "size_after", "acc_c1", "acc_c2"])

    @property
    def rounds_to_converge(self) -> int | None:
        for r, _, _, a1, a2 in self.iterations:
            if min(a1, a2) >= self.threshold:
                return r
        return None


def clean_dataset(d: Dataset, strong_cfg, acc_threshold: float = 0.999, max_rounds: int = 5,
                  seed: int = 0, min_rows: int = 20) -> CleaningReport:
    """Iteratively drop rows misclassified by a model trained on the other half.

    ``acc_c1`` is the accuracy of the model trained on the first half,
    measured on the second half, and vice versa for ``acc_c2``.
    """
    if np.unique(d.labels).size < 2:
        raise LabelGenError("cleaning needs both classes")
    if not 0.5 < acc_threshold <= 1.0:
        raise LabelGenError(f"acc_threshold must lie in (0.5, 1], got {acc_threshold}")
    report = CleaningReport(threshold=acc_threshold)
    current = d
    for r in range(1, max_rounds + 1):
        pair = split_random(current, 0.5, seed + 1000 * r, stratify=True)
        d1, d2 = pair.part_a, pair.part_b
        if min(np.unique(d1.labels).size, np.unique(d2.labels).size) < 2:
            raise LabelGenError(f"round {r}: a half lost one class ({len(current)} rows left)")
        c1, c2 = train(d1, strong_cfg), train(d2, strong_cfg)
        ok1 = c2.predict(d1.features) == d1.labels
        ok2 = c1.predict(d2.features) == d2.labels
        acc1, acc2 = float(ok2.mean()), float(ok1.mean())
        kept = np.sort(np.r_[d1.row_ids[ok1], d2.row_ids[ok2]])
        nxt = current.select_ids(kept)
        report.iterations.append((r, len(current), len(nxt), acc1, acc2))
        logger.info("clean round %d: %d -> %d rows (acc %.4f / %.4f)",
                    r, len(current), len(nxt), acc1, acc2)
        current = nxt
        if len(current) < min_rows:
            report.final_dataset = current
            raise LabelGenError(f"dataset collapsed to {len(current)} rows (< {min_rows})")
        if min(acc1, acc2) >= acc_threshold:
            report.converged = True
            break
    report.final_dataset = current
    return report


# accuracy curves and the underfitting guard --------------------------------

@dataclass(frozen=True)
class CurvePoint:
    variance_removed: float
    train_acc: float
    test_acc: float
    n_drop: int = 0


@dataclass(frozen=True)
class GuardResult:
    passed: bool
    diagnosis: str
    gap: float
    train_drop: float


def accuracy_curve(easy: Dataset, cfg, n_drops, seed: int = 0) -> list[CurvePoint]:
    """Train/test accuracy as the top principal components are removed."""
    pca = pca_fit(easy)
    total = pca.explained_variance.sum()
    pts = []
    for k in sorted(set([0, *n_drops])):
        proj = easy if k == 0 else pca_drop_top(pca, easy, k)[0]
        pair = split_random(proj, 0.5, seed, stratify=True)
        m = train(pair.part_a, cfg)
        frac = float(pca.explained_variance[:k].sum() / total) if k else 0.0
        pts.append(CurvePoint(frac, accuracy(m, pair.part_a), accuracy(m, pair.part_b), k))
    return pts


def underfit_check(curve, gap_max: float = 0.05, drop_min: float = 0.02,
                   operating: int = -1) -> GuardResult:
    """Accept a cut only when train and test accuracy fall together.

    The operating point defaults to the last (largest cut) point of the curve.
    """
    curve = list(curve)
    if len(curve) < 2:
        raise LabelGenError("accuracy curve needs at least two points")
    var = np.array([c.variance_removed for c in curve])
    if var[0] != 0.0 or np.any(np.diff(var) <= 0):
        raise LabelGenError("curve variance axis must start at 0 and increase strictly")
    op = curve[operating]
    gap = op.train_acc - op.test_acc
    drop = curve[0].train_acc - op.train_acc
    if gap > gap_max:
        return GuardResult(False, f"overfitting: train-test gap {gap:.3f} > {gap_max}", gap, drop)
    if drop < drop_min:
        return GuardResult(False, f"no underfitting: train accuracy fell only {drop:.3f} "
                                  f"(< {drop_min})", gap, drop)
    return GuardResult(True, f"underfitting: gap {gap:.3f}, train drop {drop:.3f}", gap, drop)


def choose_n_drop(easy: Dataset, cfg, seed: int = 0, gap_max: float = 0.05,
                  drop_min: float = 0.02, min_test_drop: float = 0.05, max_drop: int | None = None):
    """Smallest cut whose test accuracy falls by more than ``min_test_drop``
    while the guard passes.

    Returns ``(n_drop or None, curve)``; the curve covers every tried cut.
    """
    p = easy.n_features
    max_drop = min(p - 1, max_drop or p - 1)
    curve = accuracy_curve(easy, cfg, range(1, max_drop + 1), seed)
    for i in range(1, len(curve)):
        test_drop = curve[0].test_acc - curve[i].test_acc
        if test_drop > min_test_drop and underfit_check(curve[:i + 1], gap_max, drop_min).passed:
            return curve[i].n_drop, curve[:i + 1]
    return None, curve


# label generators -----------------------------------------------------------

def _label_frame(ctx: ProfileContext, test: Dataset, wrong_label: str, meta: dict) -> pd.DataFrame:
    df = ctx.profiles(test)
    wrong = ctx.model.predict(test.features) != test.labels
    df["diagnosis_label"] = np.where(wrong, wrong_label, DiagnosisLabel.GOOD.value)
    for key, val in meta.items():
        df[key] = val
    return df


def gen_weak_labels(easy: Dataset, base_cfg, weak_cfg, seed: int = 0, k: int | None = None,
                    dataset_name: str | None = None, artifacts: dict | None = None) -> pd.DataFrame:
    """Profiles of a weakened model's test predictions on the easy set.

    If ``artifacts`` is a dict it receives the trained ``model`` and the
    ``reference`` / ``queries`` splits, enough to re-profile points later.
    """
    if not is_weaker(weak_cfg, base_cfg):
        raise LabelGenError(f"weak config {weak_cfg} is not strictly weaker than {base_cfg}")
    pair = split_random(easy, 0.5, seed, stratify=True)
    weak = train(pair.part_a, weak_cfg)
    base = train(pair.part_a, base_cfg)
    acc_w, acc_b = accuracy(weak, pair.part_b), accuracy(base, pair.part_b)
    if acc_w >= acc_b:
        warnings.warn(f"weakening had no effect on {dataset_name or easy.name}: "
                      f"weak {acc_w:.3f} >= base {acc_b:.3f}")
    ctx = ProfileContext(pair.part_a, weak, k=k)
    if artifacts is not None:
        artifacts.update(model=weak, reference=pair.part_a, queries=pair.part_b, k=ctx.k,
                         base_accuracy=acc_b, weak_accuracy=acc_w)
    meta = {"dataset": dataset_name or easy.name, "family": weak_cfg.family,
            "generator": "weak", "config": json.dumps(config_to_dict(weak_cfg), sort_keys=True),
            "seed": seed}
    return _label_frame(ctx, pair.part_b, DiagnosisLabel.WEAK.value, meta)


def gen_mixed_labels(easy: Dataset, cfg, n_drop: int, seed: int = 0, k: int | None = None,
                     dataset_name: str | None = None, gap_max: float = 0.05,
                     drop_min: float = 0.02, curve=None, artifacts: dict | None = None) -> pd.DataFrame:
    """Profiles of a model trained after the top ``n_drop`` components are removed.

    Profiles live in the projected space. Refuses with
    :class:`UnderfitGuardError` unless the cut model underfits.
    """
    if n_drop < 1:
        raise LabelGenError("n_drop must be >= 1 to remove information")
    if curve is None:
        curve = accuracy_curve(easy, cfg, range(1, n_drop + 1), seed)
    check = underfit_check(curve, gap_max, drop_min)
    if not check.passed:
        raise UnderfitGuardError(f"cut of {n_drop} components refused ({check.diagnosis}); "
                                 "choose a weaker base model", curve, check)
    pca = pca_fit(easy)
    proj, frac = pca_drop_top(pca, easy, n_drop)
    pair = split_random(proj, 0.5, seed, stratify=True)
    model = train(pair.part_a, cfg)
    ctx = ProfileContext(pair.part_a, model, k=k)
    if artifacts is not None:
        artifacts.update(model=model, reference=pair.part_a, queries=pair.part_b, k=ctx.k,
                         pca=pca, n_drop=n_drop, variance_removed=frac, guard=check)
    meta = {"dataset": dataset_name or easy.name, "family": cfg.family, "generator": "cut",
            "config": json.dumps({**config_to_dict(cfg), "n_drop": n_drop,
                                  "variance_removed": round(frac, 6)}, sort_keys=True),
            "seed": seed}
    return _label_frame(ctx, pair.part_b, DiagnosisLabel.MIXED.value, meta)


# pooled profiles ------------------------------------------------------------

PROVENANCE = ("dataset", "family", "generator", "config", "seed", "row_id")


class LabeledPool:
    """Labelled profile vectors with per-profile provenance."""

    def __init__(self, frame: pd.DataFrame):
        missing = [c for c in (*FEATURES, "diagnosis_label") if c not in frame.columns]
        if missing:
            raise LabelGenError(f"pool frame lacks columns {missing}")
        bad = set(frame["diagnosis_label"]) - set(LABELS)
        if bad:
            raise LabelGenError(f"unknown diagnosis labels {sorted(bad)}")
        frame = frame.reset_index(drop=True)
        if "profile_id" not in frame.columns:
            parts = [frame[c].astype(str) for c in ("dataset", "family", "generator", "row_id")
                     if c in frame.columns]
            frame.insert(0, "profile_id", parts[0].str.cat(parts[1:], sep="/") if parts
                         else frame.index.astype(str))
        self.frame = frame

    def __len__(self):
        return len(self.frame)

    @property
    def X(self) -> np.ndarray:
        return self.frame[list(FEATURES)].to_numpy(dtype=float)

    @property
    def y(self) -> np.ndarray:
        return self.frame["diagnosis_label"].to_numpy()

    def counts(self) -> dict:
        c = self.frame["diagnosis_label"].value_counts()
        return {l: int(c.get(l, 0)) for l in LABELS}

    def where(self, mask) -> "LabeledPool":
        return LabeledPool(self.frame[np.asarray(mask)])

    def datasets(self):
        return sorted(self.frame["dataset"].unique())

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def from_csv(cls, path) -> "LabeledPool":
        return cls(pd.read_csv(path))

    def provenance_json(self, **extra) -> str:
        groups = (self.frame.groupby(["dataset", "family", "generator"])["diagnosis_label"]
                  .value_counts().unstack(fill_value=0))
        doc = {"counts": self.counts(),
               "contributions": [{"dataset": ds, "family": fam, "generator": gen,
                                  **{k: int(v) for k, v in row.items()}}
                                 for (ds, fam, gen), row in groups.iterrows()],
               **extra}
        return json.dumps(doc, indent=2)


def build_pool(contributions) -> LabeledPool:
    frames = [c.frame if isinstance(c, LabeledPool) else c for c in contributions]
    if not frames:
        raise LabelGenError("no contributions")
    pool = LabeledPool(pd.concat(frames, ignore_index=True))
    absent = [l for l, n in pool.counts().items() if n == 0]
    if absent:
        raise LabelGenError(f"pool has no {', '.join(absent)} profiles")
    if pool.frame["profile_id"].duplicated().any():
        raise LabelGenError("duplicate profile ids across contributions")
    logger.info("pool counts: %s", pool.counts())
    return pool
