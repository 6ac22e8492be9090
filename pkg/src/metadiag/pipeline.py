"""Orchestration of cleaning and label generation over a configured corpus."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import datasets as gen
from .config import DatasetSpec, ExperimentConfig, FamilySpec
from .data import Dataset, Scaling, load_csv, standardize
from .labels import (CleaningReport, LabeledPool, UnderfitGuardError, accuracy_curve,
                     build_pool, choose_n_drop, clean_dataset, gen_mixed_labels, gen_weak_labels)
from .neighborhood import default_k, neighbor_scale

logger = logging.getLogger(__name__)


def load_dataset(spec: DatasetSpec):
    """Load (and optionally standardise) one configured dataset.

    With ``knn_scale`` the standardised features are further divided by
    :func:`~metadiag.neighborhood.neighbor_scale`, so distance-valued
    meta-features are comparable across datasets.

    Returns ``(Dataset, extras)``; ``extras`` holds generator ground truth
    such as the ``ambiguous`` mask of the overlap generator.
    """
    extras = {}
    if spec.path:
        d, dropped = load_csv(spec.path, spec.label_column, name=spec.name)
        if dropped:
            logger.warning("%s: dropped %d rows with missing values", spec.name, dropped)
    elif spec.bundled:
        d = gen.load_bundled(spec.bundled)
    elif spec.synthetic == "overlap":
        d, extras["ambiguous"] = gen.make_overlap(spec.n, seed=spec.data_seed)
    else:
        maker = {"moons": gen.make_moons, "blobs": gen.make_blobs, "xor": gen.make_xor,
                 "circles": gen.make_circles}[spec.synthetic]
        d = maker(spec.n, seed=spec.data_seed)
    d = Dataset(d.features, d.labels, d.row_ids, d.feature_names, spec.name)
    if spec.standardize:
        d, scaling = standardize(d)
        if spec.knn_scale:
            s = neighbor_scale(d)
            d = d.with_features(d.features / s)
            scaling = Scaling(scaling.mean, scaling.scale * s, scaling.constant)
        extras["scaling"] = scaling
    return d, extras


@dataclass
class Contribution:
    dataset: str
    family: str
    cleaning: CleaningReport
    weak: object = None            # profile frame
    cut: object = None
    curve: list = field(default_factory=list)


def k_for(cfg: ExperimentConfig, n_rows: int) -> int:
    return default_k(n_rows, cfg.k_fraction, cfg.k_floor)


def clean(cfg: ExperimentConfig, d: Dataset, fam: FamilySpec) -> CleaningReport:
    return clean_dataset(d, fam.strong, cfg.acc_threshold, cfg.max_rounds, cfg.seed, cfg.min_rows)


def generate(cfg: ExperimentConfig, easy: Dataset, fam: FamilySpec, name: str,
             artifacts: dict | None = None):
    """Weak and cut contributions for one cleaned dataset and family.

    Returns ``(weak_frame, cut_frame, curve)``. The cut generator raises
    :class:`~metadiag.labels.UnderfitGuardError` when the guard fails.
    ``artifacts``, if given, receives ``weak`` and ``cut`` sub-dicts.
    """
    k = k_for(cfg, len(easy) // 2)
    wa, ca = {}, {}
    if artifacts is not None:
        artifacts.update(weak=wa, cut=ca)
    weak = gen_weak_labels(easy, fam.strong, fam.weak, cfg.seed, k, name, artifacts=wa)
    n_drop = fam.n_drop
    if n_drop is None:
        n_drop, curve = choose_n_drop(easy, fam.cut, cfg.seed, cfg.gap_max, cfg.drop_min)
        if n_drop is None:
            raise UnderfitGuardError(f"{name}/{fam.family}: no cut passes the underfitting "
                                     "guard; choose a weaker base model", curve)
    else:
        curve = accuracy_curve(easy, fam.cut, range(1, n_drop + 1), cfg.seed)
    cut = gen_mixed_labels(easy, fam.cut, n_drop, cfg.seed, k, name, cfg.gap_max,
                           cfg.drop_min, curve=curve, artifacts=ca)
    return weak, cut, curve


def run_corpus(cfg: ExperimentConfig, names=None) -> tuple[LabeledPool, list[Contribution]]:
    """Clean, label and pool every configured dataset and family in memory."""
    contribs = []
    for spec in cfg.datasets:
        if names and spec.name not in names:
            continue
        d, _ = load_dataset(spec)
        for fam in spec.families:
            rep = clean(cfg, d, fam)
            weak, cut, curve = generate(cfg, rep.final_dataset, fam, spec.name)
            logger.info("%s/%s: easy %d rows, weak errors %d, cut errors %d", spec.name,
                        fam.family, len(rep.final_dataset),
                        int((weak["diagnosis_label"] != "GoodPrediction").sum()),
                        int((cut["diagnosis_label"] != "GoodPrediction").sum()))
            contribs.append(Contribution(spec.name, fam.family, rep, weak, cut, curve))
    frames = [f for c in contribs for f in (c.weak, c.cut)]
    return build_pool(frames), contribs


def strip_membership(pool: LabeledPool, ambiguous: np.ndarray, dataset: str) -> dict:
    """Share of MD / WM profiles of ``dataset`` that fall in the ambiguous region."""
    f = pool.frame[pool.frame["dataset"] == dataset]
    inside = ambiguous[f["row_id"].to_numpy(dtype=int)]
    out = {}
    for label in ("DataMixedUp", "WeakModel", "GoodPrediction"):
        m = (f["diagnosis_label"] == label).to_numpy()
        out[label] = (float(inside[m].mean()) if m.any() else float("nan"), int(m.sum()))
    return out
