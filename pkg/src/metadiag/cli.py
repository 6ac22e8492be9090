"""Command-line front end.

Verbs ``clean``, ``genlabels``, ``trainmeta``, ``diagnose`` and ``ablate``
communicate only through files below the output directory::

    clean/<dataset>_<family>/      easy.csv, rounds.csv, report.json, preprocessing.json
    labels/<dataset>_<family>/     weak/ and cut/: model.json, reference.csv,
                                   queries.csv, profiles.csv (cut/ adds curve.csv,
                                   curve.png, pca.json, guard.json)
    pool/                          profiles.csv, provenance.json
    meta/<configuration>/          eval.csv, summary.csv, reports.json and per
                                   partition tree_*.json, rules_*.txt/json,
                                   importance_*.csv, confusion_*.png
    ablation/                      ablation.csv, summary.csv, importance.csv, ablation.png
    diagnose/                      report.json, report.csv

Every file carries the hash of the config that produced it: a
``config_hash`` field in JSON, a last column in CSV, a header line in text
and a PNG metadata entry. Writes go to a temporary file that is renamed
into place.

Exit codes: 0 success, 2 config or usage error, 3 underfitting guard
refusal, 4 any other runtime failure. Failures also print one line of JSON
to stderr and leave ``error.json`` in the output directory.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from .config import ConfigError, ExperimentConfig, describe, load_config
from .data import Dataset, preprocessing_json
from .features import FEATURES
from .labels import LABELS, LabeledPool, UnderfitGuardError, build_pool
from .meta import (CONFIGURATIONS, MetaTree, ablation, extract_rules, feature_importance,
                   importance_order, run_configuration, summarize)
from .models import config_to_dict, model_from_json
from .neighborhood import default_k
from .pipeline import clean, generate, load_dataset

logger = logging.getLogger("metadiag")

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# files ----------------------------------------------------------------------

class Outputs:
    """Atomic writer rooted at the output directory, stamping the config hash."""

    def __init__(self, root, config_hash: str):
        self.root = Path(root)
        self.hash = config_hash

    def path(self, rel) -> Path:
        return self.root / rel

    def _write(self, rel, data: bytes) -> Path:
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, p)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return p

    def json(self, rel, doc: dict) -> Path:
        doc = {"config_hash": self.hash, **doc}
        return self._write(rel, (json.dumps(doc, indent=2, default=_jsonable) + "\n").encode())

    def csv(self, rel, df: pd.DataFrame) -> Path:
        df = df.copy()
        df["config_hash"] = self.hash
        return self._write(rel, df.to_csv(index=False, lineterminator="\n").encode())

    def text(self, rel, body: str) -> Path:
        return self._write(rel, f"# config_hash: {self.hash}\n{body}".encode())

    def raw(self, rel, data: bytes) -> Path:
        return self._write(rel, data)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    return str(o)


def read_frame(path) -> pd.DataFrame:
    """CSV written by :class:`Outputs`, without the hash column."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing input file {p}")
    df = pd.read_csv(p, float_precision="round_trip")
    return df.drop(columns=["config_hash"], errors="ignore")


def read_dataset(path, name=None, label_column: str = "label") -> Dataset:
    df = read_frame(path)
    if label_column not in df.columns or "row_id" not in df.columns:
        raise ValueError(f"{path}: needs 'row_id' and {label_column!r} columns")
    ids = df.pop("row_id").to_numpy()
    y = df.pop(label_column).to_numpy(dtype=np.int64)
    return Dataset(df.to_numpy(dtype=float), y, ids, tuple(df.columns), name or Path(path).stem)


def dataset_frame(d: Dataset) -> pd.DataFrame:
    return d.to_frame("label")


def _slug(name: str) -> str:
    return name.replace("->", "-to-").replace("=", "-").replace("+", "_").replace("/", "_")


def _curve_frame(curve) -> pd.DataFrame:
    return pd.DataFrame([asdict(c) for c in curve],
                        columns=["n_drop", "variance_removed", "train_acc", "test_acc"])


def _figures(args) -> bool:
    return not getattr(args, "no_figures", False)


# commands -------------------------------------------------------------------

def _pairs(cfg: ExperimentConfig, names):
    unknown = set(names or ()) - {d.name for d in cfg.datasets}
    if unknown:
        raise ConfigError(f"--dataset names unknown datasets {sorted(unknown)}")
    for spec in cfg.datasets:
        if names and spec.name not in names:
            continue
        for fam in spec.families:
            yield spec, fam, f"{spec.name}_{fam.family.lower()}"


def cmd_clean(cfg: ExperimentConfig, out: Outputs, args) -> int:
    for spec, fam, tag in _pairs(cfg, args.dataset):
        d, extras = load_dataset(spec)
        rep = clean(cfg, d, fam)
        easy = rep.final_dataset
        out.csv(f"clean/{tag}/easy.csv", dataset_frame(easy))
        out.csv(f"clean/{tag}/rounds.csv", rep.frame())
        if "scaling" in extras:
            out.raw(f"clean/{tag}/preprocessing.json", preprocessing_json(
                extras["scaling"], config_hash=out.hash).encode())
        if "ambiguous" in extras:
            out.csv(f"clean/{tag}/ambiguous.csv",
                    pd.DataFrame({"row_id": d.row_ids, "ambiguous": extras["ambiguous"]}))
        out.json(f"clean/{tag}/report.json", {
            "dataset": spec.name, "family": fam.family, "strong": config_to_dict(fam.strong),
            "seed": cfg.seed, "threshold": cfg.acc_threshold, "rows_in": len(d),
            "rows_out": len(easy), "retained_fraction": len(easy) / len(d),
            "converged": rep.converged, "rounds_to_converge": rep.rounds_to_converge,
            "iterations": rep.frame().to_dict(orient="records")})
        last = rep.iterations[-1]
        print(f"{tag}: {len(d)} -> {len(easy)} rows in {len(rep.iterations)} rounds "
              f"(acc {last[3]:.4f}/{last[4]:.4f}{', converged' if rep.converged else ''})")
    return EXIT_OK


def _save_generator(out: Outputs, rel: str, frame, art: dict):
    out.json(f"{rel}/model.json", art["model"].to_dict())
    out.csv(f"{rel}/reference.csv", dataset_frame(art["reference"]))
    out.csv(f"{rel}/queries.csv", dataset_frame(art["queries"]))
    out.csv(f"{rel}/profiles.csv", frame)


def cmd_genlabels(cfg: ExperimentConfig, out: Outputs, args) -> int:
    frames = []
    for spec, fam, tag in _pairs(cfg, args.dataset):
        easy = read_dataset(out.path(f"clean/{tag}/easy.csv"), spec.name)
        art = {}
        try:
            weak, cut, curve = generate(cfg, easy, fam, spec.name, artifacts=art)
        except UnderfitGuardError as e:
            if e.curve:
                out.csv(f"labels/{tag}/cut/curve.csv", _curve_frame(e.curve))
                if _figures(args):
                    from .plotting import accuracy_curve_png
                    out.raw(f"labels/{tag}/cut/curve.png",
                            accuracy_curve_png(e.curve, f"{tag} (refused)", out.hash))
            raise
        _save_generator(out, f"labels/{tag}/weak", weak, art["weak"])
        _save_generator(out, f"labels/{tag}/cut", cut, art["cut"])
        ca = art["cut"]
        out.raw(f"labels/{tag}/cut/pca.json", json.dumps(
            {"config_hash": out.hash, "n_drop": ca["n_drop"],
             "variance_removed": ca["variance_removed"], **ca["pca"].to_dict()}).encode())
        out.json(f"labels/{tag}/cut/guard.json", {**asdict(ca["guard"]), "n_drop": ca["n_drop"]})
        out.csv(f"labels/{tag}/cut/curve.csv", _curve_frame(curve))
        if _figures(args):
            from .plotting import accuracy_curve_png
            out.raw(f"labels/{tag}/cut/curve.png",
                    accuracy_curve_png(curve, f"{tag}: cut {ca['n_drop']}", out.hash))
        for gen, f in (("weak", weak), ("cut", cut)):
            c = f["diagnosis_label"].value_counts()
            print(f"{tag}/{gen}: " + ", ".join(f"{l} {int(c.get(l, 0))}" for l in LABELS))
        frames += [weak, cut]
    pool = build_pool(frames)
    out.csv("pool/profiles.csv", pool.frame)
    out.raw("pool/provenance.json", (pool.provenance_json(config_hash=out.hash) + "\n").encode())
    print("pool: " + ", ".join(f"{l} {n}" for l, n in pool.counts().items()))
    return EXIT_OK


def read_pool(out: Outputs) -> LabeledPool:
    return LabeledPool(read_frame(out.path("pool/profiles.csv")))


def cmd_trainmeta(cfg: ExperimentConfig, out: Outputs, args) -> int:
    pool = read_pool(out)
    conf = args.configuration
    held = args.held_out or list(cfg.held_out) or None
    reports, trees = run_configuration(pool, conf, cfg.seeds, cfg.meta_max_depth,
                                       cfg.meta_min_leaf, cfg.balance_test, held_out=held,
                                       n_test_datasets=args.n_test_datasets, return_trees=True)
    base = f"meta/{conf}"
    out.csv(f"{base}/eval.csv", pd.DataFrame([r.row() for r in reports]))
    by_part, first_tree = {}, {}
    for r, t in zip(reports, trees):
        by_part.setdefault(r.metadata["partition"], []).append(r)
        first_tree.setdefault(r.metadata["partition"], t)
    summary_rows, summaries = [], {}
    for part, reps in by_part.items():
        s = summarize(reps)
        summaries[part] = s
        for k, l in enumerate(LABELS):
            summary_rows.append({"partition": part, "label": l,
                                 "precision_mean": s["precision_mean"][k],
                                 "precision_std": s["precision_std"][k],
                                 "recall_mean": s["recall_mean"][k],
                                 "recall_std": s["recall_std"][k]})
        print(f"{conf} [{part}] {len(reps)} runs, accuracy {s['accuracy_mean']:.3f}"
              f"±{s['accuracy_std']:.3f}")
        for k, l in enumerate(LABELS):
            print(f"  {l:15s} precision {s['precision_mean'][k]:.3f}±{s['precision_std'][k]:.3f}"
                  f"  recall {s['recall_mean'][k]:.3f}±{s['recall_std'][k]:.3f}")
        slug = _slug(part)
        tree = first_tree[part]
        out.raw(f"{base}/tree_{slug}.json",
                json.dumps({"config_hash": out.hash, **tree.to_dict()}, indent=1).encode())
        rules = extract_rules(tree)
        out.text(f"{base}/rules_{slug}.txt", "".join(
            f"{r.text()}  [support {r.support}, confidence {r.confidence:.3f}]\n" for r in rules))
        out.json(f"{base}/rules_{slug}.json", {"partition": part,
                                               "rules": [r.to_dict() for r in rules]})
        imp = feature_importance(tree)
        out.csv(f"{base}/importance_{slug}.csv", pd.DataFrame(
            sorted(imp.items(), key=lambda kv: (-kv[1], kv[0])), columns=["feature", "importance"]))
        if _figures(args):
            from .plotting import confusion_png
            cm = sum(r.confusion for r in reps)
            out.raw(f"{base}/confusion_{slug}.png", confusion_png(cm, f"{conf} {part}", out.hash))
    out.csv(f"{base}/summary.csv", pd.DataFrame(summary_rows))
    out.json(f"{base}/reports.json", {"configuration": conf, "seeds": list(cfg.seeds),
                                      "summary": summaries,
                                      "reports": [r.to_dict() for r in reports]})
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, out: Outputs, args) -> int:
    pool = read_pool(out)
    order, imp = importance_order(pool, cfg.seed, cfg.meta_max_depth, cfg.meta_min_leaf)
    df = ablation(pool, cfg.seeds, cfg.meta_max_depth, cfg.meta_min_leaf, order=order)
    out.csv("ablation/ablation.csv", df)
    g = df.drop(columns=["seed", "removed_feature"]).groupby(["n_removed", "n_remaining"])
    summ = g.mean().add_suffix("_mean").join(g.std(ddof=0).add_suffix("_std")).reset_index()
    summ.insert(2, "removed_feature", ["", *order])
    out.csv("ablation/summary.csv", summ)
    out.csv("ablation/importance.csv", pd.DataFrame(
        [(f, imp[f]) for f in order], columns=["feature", "importance"]))
    if _figures(args):
        from .plotting import ablation_png
        out.raw("ablation/ablation.png", ablation_png(df, out.hash))
    for _, r in summ.iterrows():
        print(f"removed {int(r.n_removed):2d} ({r.removed_feature or '-':27s}) "
              f"accuracy {r.accuracy_mean:.3f}±{r.accuracy_std:.3f}")
    return EXIT_OK


def _parse_rows(text):
    if text is None:
        return None
    parts = [p for p in text.replace(" ", "").split(",") if p]
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"--rows must be a comma-separated list of integers, got {text!r}") from None


def cmd_diagnose(cfg: ExperimentConfig | None, out: Outputs, args) -> int:
    from .features import ProfileContext
    from .meta import predict, rule_for

    tree = MetaTree.from_json(Path(args.tree).read_text())
    model = model_from_json(Path(args.model).read_text())
    ref = read_dataset(args.reference, "reference")
    qry = read_dataset(args.queries, "queries")
    if ref.feature_names != qry.feature_names:
        raise ValueError(f"dimension mismatch: reference columns {list(ref.feature_names)} vs "
                         f"query columns {list(qry.feature_names)}")
    if model.n_features != ref.n_features:
        raise ValueError(f"dimension mismatch: model expects {model.n_features} features, "
                         f"data has {ref.n_features}")
    rows = _parse_rows(args.rows)
    if rows is not None:
        missing = sorted(set(rows) - set(qry.row_ids.tolist()))
        if missing:
            raise KeyError(f"query row ids not found: {missing}")
        qry = qry.select_ids(rows) if rows else qry.subset(np.zeros(len(qry), bool))
    if args.k:
        k = args.k
    elif cfg is not None:
        k = default_k(len(ref), cfg.k_fraction, cfg.k_floor)
    else:
        k = default_k(len(ref))
    results, table = [], []
    if len(qry):
        ctx = ProfileContext(ref, model, k=k)
        prof = ctx.profiles(qry)
        pred = model.predict(qry.features)
        for i, (_, p) in enumerate(prof.iterrows()):
            z = {f: float(p[f]) for f in FEATURES}
            label = predict(tree, z)
            rule = rule_for(tree, z)
            tested = {f: z[f] for f, _, _ in rule.conditions}
            results.append({"row_id": int(p["row_id"]), "label": int(qry.labels[i]),
                            "predicted": int(pred[i]), "diagnosis": label, "rule": rule.text(),
                            "rule_support": rule.support, "rule_confidence": rule.confidence,
                            "tested": tested, "profile": z})
            table.append({"row_id": int(p["row_id"]), "label": int(qry.labels[i]),
                          "predicted": int(pred[i]), "diagnosis": label, "rule": rule.text(), **z})
            print(f"row {int(p['row_id'])}: {label}  {rule.text()}")
    else:
        print("no query rows; empty report")
    out.json("diagnose/report.json", {"k": k, "n_queries": len(results), "results": results})
    out.csv("diagnose/report.csv", pd.DataFrame(
        table, columns=["row_id", "label", "predicted", "diagnosis", "rule", *FEATURES]))
    return EXIT_OK


# entry point ----------------------------------------------------------------

COMMANDS = {"clean": cmd_clean, "genlabels": cmd_genlabels, "trainmeta": cmd_trainmeta,
            "ablate": cmd_ablate, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment TOML file")
    common.add_argument("--seed-list", default=argparse.SUPPRESS,
                        help="comma-separated seeds, replaces the config's list")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)
    p = _Parser(prog="metadiag", parents=[common],
                description="Diagnose misclassified points of binary classifiers.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    for verb, help_ in (("clean", "cross-clean each dataset into an easy set"),
                        ("genlabels", "generate WeakModel / DataMixedUp labelled profiles")):
        s = sub.add_parser(verb, parents=[common], help=help_)
        s.add_argument("--dataset", action="append", help="restrict to these datasets")
        if verb == "genlabels":
            s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("trainmeta", parents=[common], help="train and evaluate the meta-tree")
    s.add_argument("configuration", choices=CONFIGURATIONS)
    s.add_argument("--held-out", action="append", help="dataset held out (cross_dataset_small)")
    s.add_argument("--n-test-datasets", type=int, help="datasets held out per seed "
                                                       "(cross_dataset_random)")
    s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("ablate", parents=[common], help="feature ablation curve")
    s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("diagnose", parents=[common], help="diagnose query points")
    s.add_argument("--tree", required=True, help="meta-tree JSON")
    s.add_argument("--model", required=True, help="base model JSON")
    s.add_argument("--reference", required=True, help="training data CSV of the base model")
    s.add_argument("--queries", required=True, help="CSV holding the query points")
    s.add_argument("--rows", help="comma-separated query row ids (default: all)")
    s.add_argument("--k", type=int, help="neighborhood size")
    return p


def _seed_list(text):
    try:
        seeds = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seed-list must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seed-list is empty")
    return seeds


def _file_hash(paths, extra="") -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    h.update(extra.encode())
    return h.hexdigest()[:16]


def _fail(code: int, err: Exception, command, out_dir, **extra) -> int:
    doc = {"error": type(err).__name__, "exit_code": code, "command": command,
           "message": str(err).strip("'\""), **extra}
    line = json.dumps(doc, default=_jsonable)
    print(line, file=sys.stderr)
    if out_dir is not None:
        try:
            Outputs(out_dir, doc.get("config_hash", "")).json("error.json", doc)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    command, out_dir, cfg_hash = None, None, ""
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        verbose = getattr(args, "verbose", 0) or 0
        logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)],
                            format="%(levelname)s %(name)s: %(message)s")
        logging.captureWarnings(True)
        overrides = {}
        if getattr(args, "seed_list", None) is not None:
            overrides["seeds"] = _seed_list(args.seed_list)
        if getattr(args, "out", None) is not None:
            out_dir = Path(args.out)
            overrides["out"] = str(args.out)
        cfg = None
        if getattr(args, "config", None):
            cfg = load_config(args.config, overrides)
            out_dir = Path(cfg.out)
            cfg_hash = cfg.config_hash()
            logger.info("config %s (hash %s): %s", args.config, cfg_hash,
                        json.dumps(describe(cfg))[:300])
        elif command != "diagnose":
            raise ConfigError(f"{command} needs --config")
        if command == "diagnose":
            cfg_hash = _file_hash([args.tree, args.model, args.reference, args.queries],
                                  f"{args.rows}|{args.k}")
            out_dir = out_dir or Path("runs")
        out = Outputs(out_dir, cfg_hash)
        code = COMMANDS[command](cfg, out, args)
        (out_dir / "error.json").unlink(missing_ok=True)
        return code
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return _fail(EXIT_CONFIG, e, command, out_dir)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e, command, out_dir)
    except UnderfitGuardError as e:
        extra = {"config_hash": cfg_hash, "curve": [asdict(c) for c in e.curve]}
        if e.check is not None:
            extra["guard"] = asdict(e.check)
        return _fail(EXIT_GUARD, e, command, out_dir, **extra)
    except Exception as e:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        return _fail(EXIT_RUNTIME, e, command, out_dir, config_hash=cfg_hash)


if __name__ == "__main__":
    sys.exit(main())
