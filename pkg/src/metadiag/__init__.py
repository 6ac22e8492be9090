"""Diagnose why a binary classifier misclassifies individual points.

Each test point gets one of three labels, ``GoodPrediction``, ``WeakModel``
or ``DataMixedUp``, from a decision tree trained on local meta-features.
"""
from .config import ConfigError, ExperimentConfig, load_config
from .data import Dataset, load_csv, pca_drop_top, pca_fit, split_random, standardize
from .features import ABSENT, FEATURES, ProfileContext, ProfileVector, confidence, extract_profile
from .labels import (LABELS, CleaningReport, DiagnosisLabel, LabeledPool, UnderfitGuardError,
                     accuracy_curve, build_pool, clean_dataset, gen_mixed_labels,
                     gen_weak_labels, underfit_check)
from .meta import (DecisionRule, EvalReport, MetaTree, ablation, evaluate, extract_rules,
                   feature_importance, predict, rebalance, run_configuration, train_tree)
from .models import GbtConfig, MlpConfig, train
from .neighborhood import build_knn_index, build_mst, query_knn
from .pipeline import load_dataset, run_corpus

__version__ = "0.1.0"

__all__ = [
    "ABSENT", "FEATURES", "LABELS", "CleaningReport", "ConfigError", "ExperimentConfig", "Dataset", "DecisionRule",
    "DiagnosisLabel", "EvalReport", "GbtConfig", "LabeledPool", "MetaTree", "MlpConfig",
    "ProfileContext", "ProfileVector", "UnderfitGuardError", "ablation", "accuracy_curve",
    "build_knn_index", "build_mst", "build_pool", "clean_dataset", "confidence", "evaluate",
    "extract_profile", "extract_rules", "feature_importance", "gen_mixed_labels",
    "gen_weak_labels", "load_config", "load_csv", "load_dataset", "pca_drop_top", "pca_fit", "predict", "query_knn",
    "rebalance", "run_configuration", "run_corpus", "split_random", "standardize", "train", "train_tree",
    "underfit_check",
]
