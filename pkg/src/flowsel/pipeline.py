"""Experiment orchestration with content-addressed stage artifacts.

Every stage derives a short hash from the configuration slice that could
change its output and writes its artifacts under that hash; rerunning
with the same config finds and reuses them unless forced.  One master
seed fans out to per-stage seeds, so a whole run is reproducible from a
single number, and the seeds each stage actually used are recorded in the
run's JSON record.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from . import correlation, dataset, metrics, neural_net, random_forest, subset_search
from .errors import DataError, PipelineError

METHODS = ("full", "ba", "ao", "rf-ig", "brute")
MODELS = ("rf", "mlp")
MODES = ("categorical", "binary")
AVERAGINGS = ("micro", "macro", "weighted")

REPORT_COLUMNS = (
    "methodology", "K", "cfs", "ig", "time_s",
    "accuracy", "precision", "far", "f1",
)

_STAGE_IDS = {"split": 0, "select": 1, "train": 2, "importance": 3}


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, nested model configs included.

    Stage seeds are derived from ``seed``; the seed fields inside the
    nested configs are placeholders that the pipeline overwrites.
    """

    data_paths: tuple[str, ...] = ()
    label_column: str = "Label"
    benign: str = "Benign"
    grouping: str | None = None  # None, "default", or a JSON file path
    drop_columns: tuple[str, ...] = dataset.DEFAULT_DROP_COLUMNS

    ratio: float = 0.5
    stratified: bool = False
    normalize_before_split: bool = False

    mode: str = "categorical"
    method: str = "full"
    model: str = "rf"
    averaging: str = "macro"
    collapse: bool = False  # score a categorical model as a binary detector
    k: int | None = None  # rf-ig subset size

    seed: int = 0
    out_dir: str = "runs"
    force: bool = False

    bat: subset_search.BatConfig = field(default_factory=subset_search.BatConfig)
    aquila: subset_search.AquilaConfig = field(default_factory=subset_search.AquilaConfig)
    forest: random_forest.ForestConfig = field(default_factory=random_forest.ForestConfig)
    mlp: neural_net.MlpConfig = field(default_factory=neural_net.MlpConfig)

    def validated(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.model not in MODELS:
            raise DataError(f"unknown model {self.model!r}; pick one of {MODELS}")
        if self.mode not in MODES:
            raise DataError(f"unknown mode {self.mode!r}; pick one of {MODES}")
        if self.averaging not in AVERAGINGS:
            raise DataError(f"unknown averaging {self.averaging!r}")
        if self.method == "rf-ig" and self.k is None:
            raise DataError("method rf-ig needs an explicit subset size k")
        if self.collapse and self.mode != "categorical":
            raise DataError("collapse only applies to categorical runs")
        if not self.data_paths:
            raise DataError("no input data files given")
        return self


def stage_seed(master: int, stage: str) -> int:
    """Derive a stage's seed from the master seed, stable across runs."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=(_STAGE_IDS[stage],))
    return int(ss.generate_state(1)[0])


def _hash_key(payload) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def load_grouping(spec: str | None) -> dict | None:
    """Resolve the grouping argument: None, the packaged default, or a file."""
    if spec is None:
        return None
    if spec == "default":
        text = resources.files("flowsel").joinpath("data/cic2018_grouping.json").read_text()
        return json.loads(text)
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot open grouping file {spec}: {exc}") from exc


def _grouping_fingerprint(spec: str | None) -> str:
    grouping = load_grouping(spec)
    if grouping is None:
        return "none"
    return _hash_key(grouping)


# ---------------------------------------------------------------------------
# stages


def _preprocess_key(cfg: ExperimentConfig) -> str:
    return _hash_key({
        "data": list(cfg.data_paths),
        "label": cfg.label_column,
        "benign": cfg.benign,
        "grouping": _grouping_fingerprint(cfg.grouping),
        "drop": sorted(cfg.drop_columns),
        "ratio": cfg.ratio,
        "stratified": cfg.stratified,
        "pre_norm": cfg.normalize_before_split,
        "seed": stage_seed(cfg.seed, "split"),
    })


def preprocess_stage(cfg: ExperimentConfig) -> tuple[dataset.SplitPair, dict]:
    """Load, clean, and split the input; cached as two dataset files."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    key = _preprocess_key(cfg)
    train_path = os.path.join(cfg.out_dir, f"clean_{key}.train.ds")
    test_path = os.path.join(cfg.out_dir, f"clean_{key}.test.ds")
    report_path = os.path.join(cfg.out_dir, f"preprocess_{key}.json")
    artifacts = {"train": train_path, "test": test_path, "report": report_path}

    if not cfg.force and all(os.path.exists(p) for p in artifacts.values()):
        pair = dataset.SplitPair(
            dataset.load_dataset(train_path),
            dataset.load_dataset(test_path),
            seed=stage_seed(cfg.seed, "split"),
            ratio=cfg.ratio,
        )
        return pair, artifacts

    tables = [dataset.load_csv(p, cfg.label_column) for p in cfg.data_paths]
    # day files may disagree only on columns we drop anyway
    tables = [dataset.drop_named_columns(t, cfg.drop_columns) for t in tables]
    table = dataset.merge_tables(tables)
    pair, report = dataset.prepare_splits(
        table,
        benign=cfg.benign,
        grouping=load_grouping(cfg.grouping),
        ratio=cfg.ratio,
        seed=stage_seed(cfg.seed, "split"),
        stratified=cfg.stratified,
        normalize_before_split=cfg.normalize_before_split,
        drop_columns=cfg.drop_columns,
    )
    dataset.save_dataset(pair.train, train_path)
    dataset.save_dataset(pair.test, test_path)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return pair, artifacts


def correlate_stage(cfg: ExperimentConfig, pair: dataset.SplitPair):
    """Spearman matrix over the training partition, cached as heatmap CSV."""
    key = _hash_key({"pre": _preprocess_key(cfg), "mode": cfg.mode})
    path = os.path.join(cfg.out_dir, f"corr_{key}.csv")
    if not cfg.force and os.path.exists(path) and os.path.exists(path + ".meta.json"):
        return correlation.load_heatmap(path), {"heatmap": path}
    class_cols, class_names = dataset.class_indicator_columns(
        pair.train, binary=cfg.mode == "binary"
    )
    corr = correlation.spearman_matrix(
        pair.train.features, class_cols, pair.train.feature_names, class_names
    )
    correlation.export_heatmap(corr, path)
    return corr, {"heatmap": path}


def _importance_key(cfg: ExperimentConfig) -> str:
    f = cfg.forest
    return _hash_key({
        "pre": _preprocess_key(cfg),
        "mode": cfg.mode,
        "forest": [f.n_trees, f.max_depth, f.min_node_size,
                   f.features_per_split, f.bootstrap, f.weighted_importance],
        "seed": stage_seed(cfg.seed, "importance"),
    })


def _train_view(cfg: ExperimentConfig, pair: dataset.SplitPair) -> dataset.Dataset:
    if cfg.mode == "binary":
        return dataset.binary_view(pair.train, cfg.benign)
    return pair.train


def importance_stage(cfg: ExperimentConfig, pair: dataset.SplitPair):
    """Full-feature forest importances, cached as a sorted CSV.

    Used both to drive rf-ig selection and to report the importance mass a
    subset captures.
    """
    key = _importance_key(cfg)
    path = os.path.join(cfg.out_dir, f"importance_{key}.csv")
    names = pair.train.feature_names
    if not cfg.force and os.path.exists(path):
        imp, meta = load_importance(path, names)
        return imp, float(meta.get("build_seconds", 0.0)), {"importance": path}

    forest_cfg = dataclasses.replace(
        cfg.forest, seed=stage_seed(cfg.seed, "importance")
    )
    forest = random_forest.train_forest(_train_view(cfg, pair), forest_cfg)
    save_importance(forest, names, path)
    return forest.importances, forest.build_seconds, {"importance": path}


def save_importance(forest: random_forest.TrainedForest, feature_names, path: str) -> None:
    order = np.argsort(-forest.importances, kind="stable")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed={forest.config.seed}\n")
        fh.write(f"# n_trees={forest.config.n_trees}\n")
        fh.write(f"# max_depth={forest.config.max_depth}\n")
        oob = forest.oob_accuracy
        fh.write(f"# oob_accuracy={'nan' if math.isnan(oob) else repr(oob)}\n")
        fh.write(f"# oob_skipped={forest.oob_skipped}\n")
        fh.write(f"# build_seconds={forest.build_seconds!r}\n")
        fh.write("feature,importance\n")
        for i in order:
            fh.write(f"{feature_names[i]},{float(forest.importances[i])!r}\n")


def load_importance(path: str, feature_names) -> tuple[np.ndarray, dict]:
    lookup = {n: i for i, n in enumerate(feature_names)}
    imp = np.zeros(len(feature_names))
    meta: dict = {}
    seen = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
                continue
            if line == "feature,importance":
                continue
            name, _, value = line.partition(",")
            if name not in lookup:
                raise DataError(f"{path}: unknown feature {name!r}")
            imp[lookup[name]] = float(value)
            seen += 1
    if seen != len(feature_names):
        raise DataError(f"{path}: expected {len(feature_names)} rows, found {seen}")
    return imp, meta


def select_stage(cfg: ExperimentConfig, corr, pair: dataset.SplitPair,
                 importances=None, importance_seconds: float = 0.0):
    """Produce the feature subset for the configured method.

    Returns (subset, selection_seconds, artifacts).  Selection time for
    rf-ig is the importance forest's build time, since that forest is the
    selector.
    """
    names = pair.train.feature_names
    sel_seed = stage_seed(cfg.seed, "select")
    key = _hash_key({
        "pre": _preprocess_key(cfg),
        "mode": cfg.mode,
        "method": cfg.method,
        "k": cfg.k,
        "seed": sel_seed,
        "bat": [cfg.bat.n, cfg.bat.t_max, cfg.bat.alpha, cfg.bat.gamma,
                cfg.bat.f_max, cfg.bat.loudness_init, cfg.bat.walk_scale,
                cfg.bat.canonical_pulse],
        "aquila": [cfg.aquila.n, cfg.aquila.t_max],
        "importance": _importance_key(cfg) if cfg.method == "rf-ig" else None,
    })
    subset_path = os.path.join(cfg.out_dir, f"subset_{key}.txt")
    trace_path = os.path.join(cfg.out_dir, f"trace_{key}.csv")
    artifacts = {"subset": subset_path}

    if not cfg.force and os.path.exists(subset_path):
        subset, meta = subset_search.load_subset(subset_path, names)
        if subset.cfs is None:
            subset = dataclasses.replace(subset, cfs=correlation.cfs_merit(corr, subset.indices))
        if subset.ig is None and importances is not None:
            subset = dataclasses.replace(subset, ig=correlation.ig_sum(importances, subset.indices))
        return subset, float(meta.get("elapsed", 0.0)), artifacts

    if cfg.method == "full":
        indices = tuple(range(len(names)))
        elapsed = 0.0
        trace = None
    elif cfg.method == "ba":
        result = subset_search.bat_run(corr, dataclasses.replace(cfg.bat, seed=sel_seed))
        indices, elapsed, trace = result.best.indices, result.elapsed, result
    elif cfg.method == "ao":
        result = subset_search.aquila_run(corr, dataclasses.replace(cfg.aquila, seed=sel_seed))
        indices, elapsed, trace = result.best.indices, result.elapsed, result
    elif cfg.method == "brute":
        result = subset_search.brute_force_best(corr)
        indices, elapsed, trace = result.best.indices, result.elapsed, result
    else:  # rf-ig
        if importances is None:
            raise DataError("rf-ig selection needs importances")
        indices = random_forest.select_top_k(importances, cfg.k).indices
        elapsed = importance_seconds
        trace = None

    subset = subset_search.FeatureSubset(
        indices,
        cfs=correlation.cfs_merit(corr, indices),
        ig=correlation.ig_sum(importances, indices) if importances is not None else None,
    )
    subset_search.save_subset(subset, names, subset_path, method=cfg.method,
                              seed=sel_seed, elapsed=elapsed)
    if trace is not None:
        subset_search.save_trace(trace, trace_path)
        artifacts["trace"] = trace_path
    return subset, elapsed, artifacts


def _slice_features(data: dataset.Dataset, subset: subset_search.FeatureSubset) -> dataset.Dataset:
    idx = list(subset.indices)
    return dataset.Dataset(
        data.features[:, idx],
        tuple(data.feature_names[i] for i in idx),
        data.labels_cat,
        data.labels_bin,
        data.class_names,
    )


def train_stage(cfg: ExperimentConfig, pair: dataset.SplitPair,
                subset: subset_search.FeatureSubset):
    """Fit the configured model on the selected features; cached on disk."""
    key = _hash_key({
        "pre": _preprocess_key(cfg),
        "mode": cfg.mode,
        "subset": list(subset.indices),
        "model": cfg.model,
        "seed": stage_seed(cfg.seed, "train"),
        "forest": [cfg.forest.n_trees, cfg.forest.max_depth, cfg.forest.min_node_size,
                   cfg.forest.features_per_split, cfg.forest.bootstrap,
                   cfg.forest.weighted_importance],
        "mlp": [list(cfg.mlp.hidden_sizes), cfg.mlp.batch_size, cfg.mlp.epochs,
                cfg.mlp.learning_rate, cfg.mlp.optimizer],
    })
    path = os.path.join(cfg.out_dir, f"model_{key}.bin")
    train_view = _slice_features(_train_view(cfg, pair), subset)
    seed = stage_seed(cfg.seed, "train")

    if cfg.model == "rf":
        if not cfg.force and os.path.exists(path):
            model = random_forest.load_forest(path)
            return model, model.build_seconds, {"model": path}
        forest = random_forest.train_forest(
            train_view, dataclasses.replace(cfg.forest, seed=seed)
        )
        random_forest.save_forest(forest, path)
        return forest, forest.build_seconds, {"model": path}

    if not cfg.force and os.path.exists(path):
        model = neural_net.load_model(path)
        return model, model.build_seconds, {"model": path}
    head = "binary" if cfg.mode == "binary" else "categorical"
    model = neural_net.train(
        train_view, dataclasses.replace(cfg.mlp, seed=seed), head=head
    )
    neural_net.save_model(model, path)
    trace_path = os.path.join(cfg.out_dir, f"loss_{key}.csv")
    neural_net.save_loss_trace(model, trace_path)
    return model, model.build_seconds, {"model": path, "loss_trace": trace_path}


def _predict(cfg: ExperimentConfig, model, features) -> np.ndarray:
    if cfg.model == "rf":
        return random_forest.predict(model, features)
    return neural_net.predict(model, features)


def evaluate_stage(cfg: ExperimentConfig, model, pair: dataset.SplitPair,
                   subset: subset_search.FeatureSubset):
    """Test-set confusion matrix and metric report for the configured view."""
    test_view = _slice_features(
        dataset.binary_view(pair.test, cfg.benign) if cfg.mode == "binary" else pair.test,
        subset,
    )
    preds = _predict(cfg, model, test_view.features)
    cm = metrics.confusion(test_view.labels_cat, preds, test_view.class_names)
    if cfg.mode == "binary":
        report = metrics.binary_metrics(cm, positive="attack")
    elif cfg.collapse:
        cm = metrics.collapse_to_binary(cm, cfg.benign)
        report = metrics.binary_metrics(cm, positive="attack")
    else:
        report = metrics.multiclass_metrics(cm, cfg.averaging)
    return cm, report


# ---------------------------------------------------------------------------
# run records and reports


def _methodology(cfg: ExperimentConfig) -> str:
    mode = "bi" if cfg.mode == "binary" or cfg.collapse else "cat"
    return f"{mode}.{cfg.method}.{cfg.model}"


def _report_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_record_row(record: dict) -> dict:
    """The report-table row derived from one run record."""
    m = record["metrics"]
    return {
        "methodology": record["methodology"],
        "K": record["subset"]["k"],
        "cfs": record["subset"]["cfs_merit"],
        "ig": record["subset"]["ig_sum"],
        "time_s": record["timing"]["selection_seconds"] + record["timing"]["build_seconds"],
        "accuracy": m["accuracy"],
        "precision": m["precision"],
        "far": m["far"],
        "f1": m["f1"],
    }


def write_report_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_report_value(row[c]) for c in REPORT_COLUMNS) + "\n")


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """Execute every stage and write the run record JSON.

    Any stage failure is re-raised as PipelineError naming the stage and
    the artifacts completed before it.
    """
    cfg = cfg.validated()
    completed: dict = {}
    started = datetime.now(timezone.utc).isoformat()
    stage = "preprocess"
    try:
        pair, artifacts = preprocess_stage(cfg)
        completed.update(artifacts)
        stage = "correlate"
        corr, artifacts = correlate_stage(cfg, pair)
        completed.update(artifacts)
        stage = "importance"
        importances, imp_seconds, artifacts = importance_stage(cfg, pair)
        completed.update(artifacts)
        stage = "select"
        subset, selection_seconds, artifacts = select_stage(
            cfg, corr, pair, importances, imp_seconds
        )
        completed.update(artifacts)
        stage = "train"
        model, build_seconds, artifacts = train_stage(cfg, pair, subset)
        completed.update(artifacts)
        stage = "evaluate"
        cm, report = evaluate_stage(cfg, model, pair, subset)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc), completed) from exc

    key = _hash_key({
        "pre": _preprocess_key(cfg), "mode": cfg.mode, "method": cfg.method,
        "model": cfg.model, "seed": cfg.seed, "averaging": cfg.averaging,
        "collapse": cfg.collapse, "k": cfg.k,
    })
    cm_path = os.path.join(cfg.out_dir, f"cm_{key}.csv")
    metrics.save_confusion(cm, cm_path)
    completed["confusion"] = cm_path

    record = {
        "methodology": _methodology(cfg),
        "mode": cfg.mode,
        "method": cfg.method,
        "model": cfg.model,
        "averaging": report.averaging,
        "feature_names": list(pair.train.feature_names),
        "subset": {
            "k": subset.k,
            "indices": list(subset.indices),
            "names": [pair.train.feature_names[i] for i in subset.indices],
            "cfs_merit": subset.cfs.merit if subset.cfs else None,
            "r_cf": subset.cfs.r_cf if subset.cfs else None,
            "r_ff": subset.cfs.r_ff if subset.cfs else None,
            "ig_sum": subset.ig,
        },
        "metrics": {
            "accuracy": report.accuracy,
            "precision": report.precision,
            "recall": report.recall,
            "far": report.far,
            "f1": report.f1,
            "undefined": list(report.undefined),
            "skipped": report.skipped,
        },
        "timing": {
            "selection_seconds": selection_seconds,
            "build_seconds": build_seconds,
        },
        "seeds": {
            "master": cfg.seed,
            "split": stage_seed(cfg.seed, "split"),
            "select": stage_seed(cfg.seed, "select"),
            "train": stage_seed(cfg.seed, "train"),
            "importance": stage_seed(cfg.seed, "importance"),
        },
        "timestamps": {"started": started,
                       "finished": datetime.now(timezone.utc).isoformat()},
        "artifacts": completed,
    }
    record_path = os.path.join(cfg.out_dir, f"run_{key}.json")
    with open(record_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    record["artifacts"]["record"] = record_path
    return record


def load_records(out_dir: str) -> list[dict]:
    records = []
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("run_") and name.endswith(".json"):
            with open(os.path.join(out_dir, name), "r", encoding="utf-8") as fh:
                records.append(json.load(fh))
    return records


def compare(records: list[dict]):
    """Report rows plus subset-overlap region counts across methods.

    All records must share one feature universe; the overlap counts cover
    every non-empty combination of the distinct methods present (the
    regions of a Venn diagram).
    """
    if not records:
        raise DataError("no run records to compare")
    universe = records[0]["feature_names"]
    for r in records[1:]:
        if r["feature_names"] != universe:
            raise DataError("run records disagree on the feature universe")

    rows = [run_record_row(r) for r in records]

    method_sets: dict[str, set] = {}
    for r in records:
        method_sets.setdefault(r["method"], set()).update(r["subset"]["indices"])
    methods = sorted(method_sets)
    overlap_rows = []
    for code in range(1, 1 << len(methods)):
        members = [m for i, m in enumerate(methods) if code >> i & 1]
        others = [m for m in methods if m not in members]
        region = set(range(len(universe)))
        for m in members:
            region &= method_sets[m]
        for m in others:
            region -= method_sets[m]
        overlap_rows.append({"methods": "+".join(members), "count": len(region)})
    return rows, overlap_rows


def write_overlap_csv(overlap_rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("methods,count\n")
        for row in overlap_rows:
            fh.write(f"{row['methods']},{row['count']}\n")


def depth_sweep(train: dataset.Dataset, depths, forest_cfg: random_forest.ForestConfig):
    """Out-of-bag accuracy across tree depth caps; the best row is marked."""
    rows = []
    for depth in depths:
        cfg = dataclasses.replace(forest_cfg, max_depth=int(depth))
        forest = random_forest.train_forest(train, cfg)
        rows.append({
            "depth": int(depth),
            "oob_accuracy": forest.oob_accuracy,
            "oob_skipped": forest.oob_skipped,
            "build_seconds": forest.build_seconds,
        })
    best = max(range(len(rows)), key=lambda i: rows[i]["oob_accuracy"])
    for i, row in enumerate(rows):
        row["best"] = i == best
    return rows


def write_depth_sweep_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("depth,oob_accuracy,oob_skipped,build_seconds,best\n")
        for r in rows:
            fh.write(
                f"{r['depth']},{r['oob_accuracy']!r},{r['oob_skipped']},"
                f"{r['build_seconds']!r},{int(r['best'])}\n"
            )
