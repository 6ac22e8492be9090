"""Experiment configuration read from TOML.

One ``[[datasets]]`` table per dataset, each with a ``[datasets.gbt]`` and/or
``[datasets.mlp]`` sub-table naming the strong, weak and cut models and the
number of principal components to drop. A minimal file::

    seeds = [0, 1, 2]
    out = "runs/desk"

    [[datasets]]
    name = "diabetes"
    bundled = "diabetes"

    [datasets.gbt]
    strong = { n_trees = 50, max_depth = 3 }
    weak = { n_trees = 3, max_depth = 1 }
    cut = { n_trees = 10, max_depth = 1, learning_rate = 0.1 }
    n_drop = 3
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .models import GbtConfig, MlpConfig, ModelError, is_weaker

SYNTHETIC = ("overlap", "moons", "blobs", "xor", "circles")
FAMILIES = {"gbt": GbtConfig, "mlp": MlpConfig}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FamilySpec:
    family: str                  # "GBT" or "MLP"
    strong: object
    weak: object
    cut: object
    n_drop: int | None           # None: smallest cut passing the guard


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str | None = None
    label_column: str = "label"
    bundled: str | None = None
    synthetic: str | None = None
    n: int = 1200
    data_seed: int = 0
    standardize: bool = True
    knn_scale: bool = True
    families: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple
    seeds: tuple
    out: str = "runs"
    k_fraction: float = 0.05
    k_floor: int = 5
    acc_threshold: float = 0.999
    max_rounds: int = 5
    min_rows: int = 20
    gap_max: float = 0.05
    drop_min: float = 0.02
    meta_max_depth: int = 18
    meta_min_leaf: int = 5
    balance_test: bool = True
    held_out: tuple = ()
    source: dict = field(default_factory=dict, compare=False)

    @property
    def seed(self) -> int:
        """The seed used for the single-run stages (cleaning, labelling)."""
        return self.seeds[0]

    def dataset(self, name) -> DatasetSpec:
        for d in self.datasets:
            if d.name == name:
                return d
        raise ConfigError(f"no dataset named {name!r}")

    def config_hash(self) -> str:
        """Short digest of the config document; the output location is left out."""
        doc = {k: v for k, v in self.source.items() if k != "out"}
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _model(section, family, what, where):
    if what not in section:
        raise ConfigError(f"{where}: missing '{what}' model")
    raw = dict(section[what])
    try:
        return FAMILIES[family](**raw)
    except TypeError as e:
        raise ConfigError(f"{where}.{what}: {e}") from None
    except ModelError as e:
        raise ConfigError(f"{where}.{what}: {e}") from None


def _family(section, family, where) -> FamilySpec:
    strong = _model(section, family, "strong", where)
    weak = _model(section, family, "weak", where)
    cut = _model(section, family, "cut", where) if "cut" in section else strong
    if not is_weaker(weak, strong):
        raise ConfigError(f"{where}: weak model {weak.capacity()} is not strictly weaker "
                          f"than strong {strong.capacity()}")
    n_drop = section.get("n_drop")
    if n_drop == "auto":
        n_drop = None
    elif not isinstance(n_drop, int) or n_drop < 1:
        raise ConfigError(f"{where}: n_drop must be a positive integer or \"auto\"")
    return FamilySpec(strong.family, strong, weak, cut, n_drop)


def _dataset(doc, base: Path, i) -> DatasetSpec:
    from .datasets import BUNDLED

    where = f"datasets[{i}]"
    name = doc.get("name")
    if not name:
        raise ConfigError(f"{where}: missing name")
    where = f"datasets.{name}"
    sources = [k for k in ("path", "bundled", "synthetic") if doc.get(k)]
    if len(sources) != 1:
        raise ConfigError(f"{where}: give exactly one of path, bundled, synthetic")
    path = doc.get("path")
    if path:
        p = Path(path)
        if not p.is_absolute():
            p = base / p
        if not p.is_file():
            raise ConfigError(f"{where}: file not found: {p}")
        path = str(p)
        if "label_column" not in doc:
            raise ConfigError(f"{where}: label_column is required with path")
    if doc.get("bundled") and doc["bundled"] not in BUNDLED:
        raise ConfigError(f"{where}: unknown bundled dataset {doc['bundled']!r}")
    if doc.get("synthetic") and doc["synthetic"] not in SYNTHETIC:
        raise ConfigError(f"{where}: unknown generator {doc['synthetic']!r}")
    fams = tuple(_family(doc[f], f, f"{where}.{f}") for f in FAMILIES if f in doc)
    if not fams:
        raise ConfigError(f"{where}: needs a [gbt] or [mlp] section")
    return DatasetSpec(name, path, doc.get("label_column", "label"), doc.get("bundled"),
                       doc.get("synthetic"), int(doc.get("n", 1200)), int(doc.get("data_seed", 0)),
                       bool(doc.get("standardize", True)),
                       bool(doc.get("knn_scale", True)), fams)


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    base = Path(base_dir)
    seeds = doc.get("seeds")
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be an explicit non-empty list of integers")
    raw = doc.get("datasets") or []
    if not raw:
        raise ConfigError("no [[datasets]] given")
    datasets = tuple(_dataset(d, base, i) for i, d in enumerate(raw))
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate dataset names in {names}")
    clean = doc.get("cleaning", {})
    guard = doc.get("guard", {})
    meta = doc.get("meta", {})
    k = doc.get("k", {})
    held = tuple(meta.get("held_out", ()))
    if set(held) - set(names):
        raise ConfigError(f"meta.held_out names unknown datasets: {sorted(set(held) - set(names))}")
    cfg = ExperimentConfig(
        datasets=datasets, seeds=tuple(seeds), out=str(doc.get("out", "runs")),
        k_fraction=float(k.get("fraction", 0.05)), k_floor=int(k.get("floor", 5)),
        acc_threshold=float(clean.get("acc_threshold", 0.999)),
        max_rounds=int(clean.get("max_rounds", 5)), min_rows=int(clean.get("min_rows", 20)),
        gap_max=float(guard.get("gap_max", 0.05)), drop_min=float(guard.get("drop_min", 0.02)),
        meta_max_depth=int(meta.get("max_depth", 18)), meta_min_leaf=int(meta.get("min_leaf", 5)),
        balance_test=bool(meta.get("balance_test", True)), held_out=held, source=doc)
    if not 0.5 < cfg.acc_threshold <= 1:
        raise ConfigError("cleaning.acc_threshold must lie in (0.5, 1]")
    if not 0 < cfg.k_fraction <= 1 or cfg.k_floor < 1:
        raise ConfigError("k.fraction must lie in (0, 1] and k.floor be >= 1")
    if cfg.meta_max_depth < 1 or cfg.meta_min_leaf < 1:
        raise ConfigError("meta.max_depth and meta.min_leaf must be >= 1")
    return cfg


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a TOML config; ``overrides`` replace top-level keys
    before validation, so they are part of the config hash."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from None
    doc.update(overrides or {})
    return config_from_dict(doc, p.parent)


def describe(cfg: ExperimentConfig) -> dict:
    """Plain-data view of a validated config, for reports."""
    out = asdict(cfg)
    out.pop("source")
    return json.loads(json.dumps(out, default=lambda o: asdict(o) if hasattr(o, "__dataclass_fields__") else str(o)))
