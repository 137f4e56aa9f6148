"""End-to-end analysis pipeline with content-addressed stage caching.

A run is a fixed DAG of stages, each reading files produced by earlier
stages and writing its own outputs under the run directory.  Before running
a stage the pipeline hashes the stage's inputs (the relevant config slice
plus the content of every input file); if a previous run recorded the same
hash and the outputs still exist, the stage is skipped.  Outputs are written
atomically (temp file + rename), contain no timestamps, and all randomness
is seeded per stage from the root seed, so a repeated run yields
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from rsfc import classify, clustering, connectivity, embedding, netmetrics
from rsfc.data import (
    Manifest,
    RoiTable,
    fmt_float,
    load_features,
    load_manifest,
    load_matrix,
    load_partition,
    load_roi_table,
    load_timeseries,
    stage_of_age,
    write_embedding,
    write_features,
    write_matrix,
    write_partition,
    write_roi_table,
    write_trends,
)
from rsfc.entropy import sampen_features
from rsfc.errors import ConfigError, DataError, StageError

log = logging.getLogger("rsfc")

__all__ = ["DEFAULT_CONFIG", "load_config", "merge_config", "validate_config", "run", "STAGE_ORDER"]


DEFAULT_CONFIG: dict = {
    "manifest": None,
    "roi_table": "bundled",
    "out_dir": None,
    "seed": 0,
    "workers": 1,
    "timeseries_header": False,
    "entropy": {"m": 2, "tau": 1, "r_factor": 0.2},
    "fc": {
        "threshold": 0.3,
        "fisher_eps": 1e-7,
        "scan_start": 0.1,
        "scan_stop": 0.6,
        "scan_step": 0.05,
    },
    "stages": {
        "k_min": 1,
        "k_max": 8,
        "n_restarts": 10,
        "test_fraction": 0.2,
        "pca_variance": 0.9,
        "knn_k": 5,
        "forest_trees": 100,
        "svm_lam": 1e-3,
        "svm_lr": 0.5,
        "svm_epochs": 300,
        "svm_class_weight": "balanced",
    },
    "networks": {
        "k": "auto",
        "k_min": 2,
        "k_max": 10,
        "n_restarts": 10,
        "tsne_perplexity": 30.0,
        "tsne_iters": 1000,
        "tsne_learning_rate": 200.0,
        "tsne_exaggeration": 12.0,
        "tsne_exaggeration_iters": 250,
        "tsne_initial_dims": 50,
    },
    "trends": {"lo_pct": 2.5, "hi_pct": 97.5},
}


def merge_config(base: dict, override: dict) -> dict:
    """Recursive merge of ``override`` into ``base`` (returns a new dict)."""
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | Path) -> dict:
    """Read a JSON config file and fill in defaults."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    cfg = merge_config(DEFAULT_CONFIG, user)
    validate_config(cfg, source=str(path))
    return cfg


def _check_keys(section: dict, allowed: dict, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def validate_config(cfg: dict, source: str = "config") -> None:
    _check_keys(cfg, DEFAULT_CONFIG, source)
    for sect in ("entropy", "fc", "stages", "networks", "trends"):
        if not isinstance(cfg.get(sect), dict):
            raise ConfigError(f"{source}: section {sect!r} must be an object")
        _check_keys(cfg[sect], DEFAULT_CONFIG[sect], f"{source}.{sect}")

    if not cfg.get("manifest"):
        raise ConfigError(f"{source}: 'manifest' path is required")
    if not cfg.get("out_dir"):
        raise ConfigError(f"{source}: 'out_dir' is required")
    if not isinstance(cfg["seed"], int):
        raise ConfigError(f"{source}: seed must be an integer")
    if not (isinstance(cfg["workers"], int) and cfg["workers"] >= 1):
        raise ConfigError(f"{source}: workers must be a positive integer")

    e = cfg["entropy"]
    if e["m"] < 1 or e["tau"] < 1 or e["r_factor"] <= 0:
        raise ConfigError(f"{source}: entropy needs m >= 1, tau >= 1, r_factor > 0")
    f = cfg["fc"]
    if not -1.0 < f["threshold"] < 1.0:
        raise ConfigError(f"{source}: fc.threshold must be in (-1, 1)")
    if not 0.0 < f["fisher_eps"] <= 0.1:
        raise ConfigError(f"{source}: fc.fisher_eps must be in (0, 0.1]")
    if not (f["scan_start"] <= f["scan_stop"] and f["scan_step"] > 0):
        raise ConfigError(f"{source}: invalid fc threshold scan range")
    s = cfg["stages"]
    if not 1 <= s["k_min"] <= s["k_max"]:
        raise ConfigError(f"{source}: stages k range invalid")
    if not 0.0 < s["test_fraction"] < 1.0:
        raise ConfigError(f"{source}: stages.test_fraction must be in (0, 1)")
    if not 0.0 < s["pca_variance"] <= 1.0:
        raise ConfigError(f"{source}: stages.pca_variance must be in (0, 1]")
    if s["svm_class_weight"] not in (None, "balanced"):
        raise ConfigError(f"{source}: stages.svm_class_weight must be null or 'balanced'")
    n = cfg["networks"]
    if n["k"] != "auto" and not (isinstance(n["k"], int) and n["k"] >= 2):
        raise ConfigError(f"{source}: networks.k must be 'auto' or an integer >= 2")
    if not 2 <= n["k_min"] <= n["k_max"]:
        raise ConfigError(f"{source}: networks k range invalid")
    t = cfg["trends"]
    if not 0.0 <= t["lo_pct"] < t["hi_pct"] <= 100.0:
        raise ConfigError(f"{source}: trends percentile band invalid")


# ---------------------------------------------------------------------------
# run context and caching
# ---------------------------------------------------------------------------


def _stage_seed(root_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _atomic_write(path: Path, write_fn: Callable[[Path], None]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_fn(tmp)
    os.replace(tmp, path)


@dataclass
class RunContext:
    cfg: dict
    out_dir: Path
    manifest: Manifest
    roi_path: Path
    table: RoiTable
    _hashes: dict[Path, str] = field(default_factory=dict)

    def seed_for(self, stage: str) -> int:
        return _stage_seed(self.cfg["seed"], stage)

    def file_hash(self, path: Path) -> str:
        path = Path(path)
        if path not in self._hashes:
            h = hashlib.sha256()
            with open(path, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
            self._hashes[path] = h.hexdigest()
        return self._hashes[path]

    def ts_paths(self) -> list[Path]:
        return [s.resolve_path(self.manifest.root) for s in self.manifest.subjects]

    def fc_path(self, subject_id: str) -> Path:
        return self.out_dir / "fc" / f"r_{subject_id}.csv"

    # common output paths
    @property
    def features_path(self) -> Path:
        return self.out_dir / "features.csv"

    @property
    def group_z_path(self) -> Path:
        return self.out_dir / "fc_group_z.csv"

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.csv"


@dataclass
class StageDef:
    name: str
    config_keys: tuple[str, ...]
    inputs: Callable[[RunContext], list[tuple[str, Path]]]  # (logical name, path)
    outputs: Callable[[RunContext], list[Path]]
    compute: Callable[[RunContext], dict]


def _input_fingerprint(ctx: RunContext, stage: StageDef) -> str:
    """Hash of the stage's config slice plus the content of every input.

    Inputs are keyed by logical name (not filesystem path) so cache records
    are identical for identical runs regardless of where they live.
    """
    payload = {
        "config": {k: ctx.cfg[k] for k in stage.config_keys},
        "inputs": {},
    }
    for name, p in stage.inputs(ctx):
        p = Path(p)
        if not p.exists():
            raise DataError(f"stage {stage.name}: missing input {p}")
        payload["inputs"][name] = ctx.file_hash(p)
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _cache_path(ctx: RunContext, stage: str) -> Path:
    return ctx.out_dir / "cache" / f"{stage}.json"


def _try_cached(ctx: RunContext, stage: StageDef, fingerprint: str) -> dict | None:
    cp = _cache_path(ctx, stage.name)
    if not cp.exists():
        return None
    try:
        with open(cp) as fh:
            rec = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if rec.get("input_hash") != fingerprint:
        return None
    if any(not (ctx.out_dir / o).exists() for o in rec.get("outputs", [])):
        return None
    return rec.get("summary", {})


def _record_cache(ctx: RunContext, stage: StageDef, fingerprint: str, summary: dict) -> None:
    cp = _cache_path(ctx, stage.name)
    cp.parent.mkdir(parents=True, exist_ok=True)
    rec = {
        "input_hash": fingerprint,
        "outputs": [str(p.relative_to(ctx.out_dir)) for p in stage.outputs(ctx)],
        "summary": summary,
    }
    _atomic_write(cp, lambda tmp: tmp.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n"))


# ---------------------------------------------------------------------------
# stage implementations
# ---------------------------------------------------------------------------


def _stage_ingest(ctx: RunContext) -> dict:
    counts: dict[int, int] = {}
    clamped = 0
    rows = []
    for s in ctx.manifest.subjects:
        p = s.resolve_path(ctx.manifest.root)
        if not p.exists():
            raise DataError(f"{s.subject_id}: time series file missing: {p}")
        sid_stage, was_clamped = stage_of_age(s.age_years)
        counts[sid_stage] = counts.get(sid_stage, 0) + 1
        clamped += int(was_clamped)
        rows.append((s.subject_id, s.age_years, sid_stage, was_clamped))

    def write_cohort(tmp: Path) -> None:
        with open(tmp, "w") as fh:
            fh.write("subject_id,age_years,stage_id,stage_clamped\n")
            for sid, age, st, cl in rows:
                fh.write(f"{sid},{fmt_float(age)},{st},{int(cl)}\n")

    _atomic_write(ctx.out_dir / "cohort.csv", write_cohort)
    _atomic_write(ctx.out_dir / "roi_table.csv", lambda t: write_roi_table(t, ctx.table))
    return {
        "n_subjects": len(ctx.manifest),
        "n_rois": len(ctx.table),
        "stage_counts": {str(k): counts[k] for k in sorted(counts)},
        "n_age_clamped": clamped,
    }


def _load_subject_ts(ctx: RunContext, subject) -> np.ndarray:
    ts = load_timeseries(
        subject.resolve_path(ctx.manifest.root), header=ctx.cfg["timeseries_header"]
    )
    if ts.shape[1] != len(ctx.table):
        raise DataError(
            f"{subject.subject_id}: {ts.shape[1]} columns but ROI table has {len(ctx.table)}"
        )
    return ts


def _map_subjects(ctx: RunContext, fn: Callable) -> list:
    workers = ctx.cfg["workers"]
    if workers == 1:
        return [fn(s) for s in ctx.manifest.subjects]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, ctx.manifest.subjects))


def _stage_entropy(ctx: RunContext) -> dict:
    e = ctx.cfg["entropy"]

    def one(subject):
        ts = _load_subject_ts(ctx, subject)
        return sampen_features(ts, m=e["m"], r_factor=e["r_factor"], tau=e["tau"])

    feats = np.vstack(_map_subjects(ctx, one))
    params = {"m": e["m"], "tau": e["tau"], "r_factor": e["r_factor"], "n_rois": len(ctx.table)}

    def write(tmp: Path) -> None:
        write_features(tmp, ctx.manifest.ids(), ctx.manifest.ages(), feats, params=None)

    _atomic_write(ctx.features_path, write)
    sidecar = ctx.features_path.with_name(ctx.features_path.name + ".params.json")
    _atomic_write(sidecar, lambda t: t.write_text(json.dumps(params, indent=2, sort_keys=True) + "\n"))
    finite = np.isfinite(feats)
    return {
        "n_subjects": int(feats.shape[0]),
        "n_features": int(feats.shape[1]),
        "n_nonfinite": int(feats.size - np.count_nonzero(finite)),
        "mean_sampen": float(np.mean(feats[finite])),
    }


def _impute_nonfinite(x: np.ndarray) -> np.ndarray:
    """Cap non-finite entries at the column's largest finite value.

    Infinite sample entropy means 'no matching templates at all'; for
    clustering purposes that is simply 'extremely irregular', so it is pinned
    to the most irregular finite observation of the same feature.
    """
    x = x.copy()
    for c in range(x.shape[1]):
        col = x[:, c]
        bad = ~np.isfinite(col)
        if np.any(bad):
            good = col[~bad]
            if good.size == 0:
                raise DataError(f"feature column {c} has no finite values")
            col[bad] = np.max(good)
    return x


def _write_kcurve(path: Path, curve: list[dict]) -> None:
    def write(tmp: Path) -> None:
        with open(tmp, "w") as fh:
            fh.write("k,inertia,within_between_ratio,converged\n")
            for row in curve:
                fh.write(
                    f"{row['k']},{fmt_float(row['inertia'])},"
                    f"{fmt_float(row['within_between_ratio'])},{int(row['converged'])}\n"
                )

    _atomic_write(path, write)


def _zscore_columns(x: np.ndarray) -> np.ndarray:
    mu = np.mean(x, axis=0)
    sd = np.std(x, axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mu) / sd


def _stage_stage_cluster(ctx: RunContext) -> dict:
    s = ctx.cfg["stages"]
    ids, ages, feats, _ = load_features(ctx.features_path)
    x = np.column_stack([_impute_nonfinite(feats), ages])
    x = _zscore_columns(x)
    ks = list(range(s["k_min"], s["k_max"] + 1))
    seed = ctx.seed_for("stage_cluster")
    elbow, curve = clustering.select_k(x, ks, seed=seed, n_restarts=s["n_restarts"])
    part = clustering.kmeans(x, elbow.k, seed=seed, n_restarts=s["n_restarts"])
    _write_kcurve(ctx.out_dir / "stage_kcurve.csv", curve)
    _atomic_write(ctx.out_dir / "stage_partition.csv", lambda t: write_partition(t, part.labels))
    age_bins = np.array([stage_of_age(a)[0] for a in ages])
    ari = clustering.adjusted_rand_index(part.labels, age_bins)
    summary = {
        "selected_k": elbow.k,
        "degenerate_elbow": elbow.degenerate,
        "inertia": part.inertia,
        "ari_vs_age_bins": ari,
    }
    _atomic_write(
        ctx.out_dir / "stage_cluster.json",
        lambda t: t.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n"),
    )
    return summary


def _stage_stage_classify(ctx: RunContext) -> dict:
    s = ctx.cfg["stages"]
    ids, ages, feats, _ = load_features(ctx.features_path)
    x = _impute_nonfinite(feats)
    y = np.array([stage_of_age(a)[0] for a in ages])
    if np.unique(y).size < 2:
        raise DataError("cohort spans fewer than two developmental stages; nothing to classify")

    pca = embedding.pca_fit(x, variance_fraction=s["pca_variance"])
    xp = embedding.pca_transform(pca, x)
    seed = ctx.seed_for("stage_classify")
    train, test = classify.stratified_split(y, s["test_fraction"], seed=seed)
    if test.size == 0:
        raise DataError("stratified split produced an empty test set")

    counts = {str(int(c)): int(np.sum(y == c)) for c in np.unique(y)}
    # accuracy of always answering the most common training class
    majority = float(np.bincount(y[train]).max() / train.size)
    models = {
        "knn": classify.KnnClassifier(k=min(s["knn_k"], train.size)),
        "forest": classify.RandomForest(n_trees=s["forest_trees"], seed=seed),
        "svm": classify.LinearSvm(
            lam=s["svm_lam"],
            lr=s["svm_lr"],
            epochs=s["svm_epochs"],
            class_weight=s["svm_class_weight"],
        ),
    }
    model_dir = ctx.out_dir / "models"
    model_dir.mkdir(parents=True, exist_ok=True)
    summary: dict = {
        "pca_components": int(pca.components.shape[0]),
        "train_size": int(train.size),
        "test_size": int(test.size),
        "class_counts": counts,
        "majority_baseline": float(majority),
    }
    classes = np.unique(y)
    for name, model in models.items():
        model.fit(xp[train], y[train])
        pred = model.predict(xp[test])
        acc = classify.accuracy(y[test], pred)
        recalls = classify.per_class_recall(y[test], pred, classes)
        _atomic_write(model_dir / f"{name}.json", lambda t, m=model: classify.save_model(t, m))
        summary[name] = {
            "test_accuracy": acc,
            "recall": {str(int(c)): (None if np.isnan(r) else float(r)) for c, r in zip(classes, recalls)},
        }
    _atomic_write(
        ctx.out_dir / "stage_classify.json",
        lambda t: t.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n"),
    )
    return summary


def _stage_fc_build(ctx: RunContext) -> dict:
    (ctx.out_dir / "fc").mkdir(parents=True, exist_ok=True)

    def one(subject):
        ts = _load_subject_ts(ctx, subject)
        r = connectivity.pearson_matrix(ts)
        _atomic_write(ctx.fc_path(subject.subject_id), lambda t: write_matrix(t, r))
        iu = np.triu_indices(r.shape[0], k=1)
        vals = r[iu]
        return float(np.mean(vals)), float(np.min(vals)), float(np.max(vals))

    stats = _map_subjects(ctx, one)
    means = [m for m, _, _ in stats]
    return {
        "n_matrices": len(stats),
        "mean_offdiag_r": float(np.mean(means)),
        "min_r": float(min(lo for _, lo, _ in stats)),
        "max_r": float(max(hi for _, _, hi in stats)),
    }


def _scan_thresholds_list(fc_cfg: dict) -> list[float]:
    out = []
    t = fc_cfg["scan_start"]
    k = 0
    while t <= fc_cfg["scan_stop"] + 1e-12:
        out.append(round(t, 10))
        k += 1
        t = fc_cfg["scan_start"] + k * fc_cfg["scan_step"]
    return out


def _load_all_fc(ctx: RunContext) -> list[np.ndarray]:
    return [load_matrix(ctx.fc_path(sid)) for sid in ctx.manifest.ids()]


def _stage_fc_scan(ctx: RunContext) -> dict:
    mats = _load_all_fc(ctx)
    thresholds = _scan_thresholds_list(ctx.cfg["fc"])
    rows = connectivity.scan_thresholds(mats, np.array(thresholds))
    _atomic_write(ctx.out_dir / "fc_scan.csv", lambda t: connectivity.write_scan_table(t, rows))
    return {
        "n_thresholds": len(rows),
        "density_at_first": rows[0]["mean_density"],
        "density_at_last": rows[-1]["mean_density"],
    }


def _stage_fc_average(ctx: RunContext) -> dict:
    mats = _load_all_fc(ctx)
    fc_cfg = ctx.cfg["fc"]
    mean_r = connectivity.group_mean(mats)
    mean_z = connectivity.group_mean([connectivity.z_matrix(m, eps=fc_cfg["fisher_eps"]) for m in mats])
    prevalence = connectivity.edge_prevalence(mats, threshold=fc_cfg["threshold"])
    _atomic_write(ctx.out_dir / "fc_group_r.csv", lambda t: write_matrix(t, mean_r))
    _atomic_write(ctx.group_z_path, lambda t: write_matrix(t, mean_z))
    _atomic_write(ctx.out_dir / "fc_prevalence.csv", lambda t: write_matrix(t, prevalence))
    iu = np.triu_indices(mean_r.shape[0], k=1)
    return {
        "mean_group_r": float(np.mean(mean_r[iu])),
        "mean_group_z": float(np.mean(mean_z[iu])),
        "mean_prevalence": float(np.mean(prevalence[iu])),
    }


def _stage_fc_export(ctx: RunContext) -> dict:
    prevalence = load_matrix(ctx.out_dir / "fc_prevalence.csv")
    nets = ctx.table.networks()
    color_of = {net: i + 1 for i, net in enumerate(nets)}
    colors = np.array([color_of[n] for n in ctx.table.network], dtype=np.int64)
    _atomic_write(
        ctx.out_dir / "brain.node",
        lambda t: connectivity.write_node_file(t, ctx.table, colors, sizes=1.0),
    )
    edge = prevalence.copy()
    np.fill_diagonal(edge, 0.0)
    _atomic_write(ctx.out_dir / "brain.edge", lambda t: connectivity.write_edge_file(t, edge))
    iu = np.triu_indices(edge.shape[0], k=1)
    return {
        "n_nodes": len(ctx.table),
        "n_network_colors": len(nets),
        "n_majority_edges": int(np.sum(edge[iu] >= 0.5)),
    }


def _stage_networks_cluster(ctx: RunContext) -> dict:
    n_cfg = ctx.cfg["networks"]
    z = load_matrix(ctx.group_z_path)
    seed = ctx.seed_for("networks_cluster")
    if n_cfg["k"] == "auto":
        ks = list(range(n_cfg["k_min"], n_cfg["k_max"] + 1))
        elbow, curve = clustering.select_k(z, ks, seed=seed, n_restarts=n_cfg["n_restarts"])
        k = elbow.k
        degenerate = elbow.degenerate
    else:
        k = int(n_cfg["k"])
        curve = clustering.distortion_curve(z, [k], seed=seed, n_restarts=n_cfg["n_restarts"])
        degenerate = False
    part = clustering.kmeans(z, k, seed=seed, n_restarts=n_cfg["n_restarts"])
    _write_kcurve(ctx.out_dir / "net_kcurve.csv", curve)
    _atomic_write(ctx.out_dir / "net_partition.csv", lambda t: write_partition(t, part.labels))
    net_labels = np.array([ctx.table.networks().index(n) for n in ctx.table.network])
    summary = {
        "selected_k": int(k),
        "degenerate_elbow": bool(degenerate),
        "inertia": part.inertia,
        "ari_vs_roi_networks": clustering.adjusted_rand_index(part.labels, net_labels),
    }
    _atomic_write(
        ctx.out_dir / "networks.json",
        lambda t: t.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n"),
    )
    return summary


def _stage_networks_embed(ctx: RunContext) -> dict:
    n_cfg = ctx.cfg["networks"]
    z = load_matrix(ctx.group_z_path)
    labels = load_partition(ctx.out_dir / "net_partition.csv")
    res = embedding.tsne(
        z,
        perplexity=n_cfg["tsne_perplexity"],
        n_iter=n_cfg["tsne_iters"],
        learning_rate=n_cfg["tsne_learning_rate"],
        early_exaggeration=n_cfg["tsne_exaggeration"],
        exaggeration_iters=n_cfg["tsne_exaggeration_iters"],
        initial_dims=n_cfg["tsne_initial_dims"],
        seed=ctx.seed_for("networks_embed"),
    )
    _atomic_write(ctx.out_dir / "embedding.csv", lambda t: write_embedding(t, res.embedding, labels))
    trust = embedding.trustworthiness(z, res.embedding, n_neighbors=5)
    agree = embedding.knn_label_agreement(res.embedding, labels, k=5)
    summary = {
        "final_kl": res.final_kl,
        "kl_checkpoints": [[int(i), float(v)] for i, v in res.kl_checkpoints],
        "trustworthiness": float(trust),
        "knn_cluster_agreement": float(agree),
    }
    _atomic_write(
        ctx.out_dir / "embed.json",
        lambda t: t.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n"),
    )
    return {
        "final_kl": summary["final_kl"],
        "trustworthiness": summary["trustworthiness"],
        "knn_cluster_agreement": summary["knn_cluster_agreement"],
    }


def _stage_netmetrics(ctx: RunContext) -> dict:
    fc_cfg = ctx.cfg["fc"]
    membership = ctx.table.network_members()
    n_nan = 0
    lines = []
    for s in ctx.manifest.subjects:
        r = load_matrix(ctx.fc_path(s.subject_id))
        z = connectivity.z_matrix(r, eps=fc_cfg["fisher_eps"])
        metrics = netmetrics.network_metrics(z, membership)
        for net in ctx.table.networks():
            w, b, seg = metrics[net]
            if not np.isfinite(seg):
                n_nan += 1
            lines.append(
                f"{s.subject_id},{fmt_float(s.age_years)},{net},"
                f"{fmt_float(w)},{fmt_float(b)},{fmt_float(seg)}\n"
            )

    def write(tmp: Path) -> None:
        with open(tmp, "w") as fh:
            fh.write("subject_id,age_years,network,wnc,bnc,segregation\n")
            fh.writelines(lines)

    _atomic_write(ctx.metrics_path, write)
    return {
        "n_rows": len(lines),
        "n_undefined_segregation": n_nan,
    }


def _load_metrics_table(path: Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Read metrics.csv back into ages plus per-network (wnc, bnc, seg) rows."""
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "age_years", "network", "wnc", "bnc", "segregation"]:
            raise DataError(f"{path}: bad metrics header")
        by_net: dict[str, list[list[float]]] = {}
        ages_by_sid: dict[str, float] = {}
        order: list[str] = []
        for row in reader:
            if not row:
                continue
            sid, age, net = row[0], float(row[1]), row[2]
            if sid not in ages_by_sid:
                ages_by_sid[sid] = age
                order.append(sid)
            by_net.setdefault(net, []).append([float(row[3]), float(row[4]), float(row[5])])
    ages = np.array([ages_by_sid[sid] for sid in order])
    out = {net: np.array(rows) for net, rows in by_net.items()}
    for net, mat in out.items():
        if mat.shape[0] != ages.shape[0]:
            raise DataError(f"{path}: network {net} missing rows for some subjects")
    return ages, out


def _stage_trends(ctx: RunContext) -> dict:
    t_cfg = ctx.cfg["trends"]
    ages, per_net = _load_metrics_table(ctx.metrics_path)
    rows = netmetrics.age_trends(ages, per_net, lo_pct=t_cfg["lo_pct"], hi_pct=t_cfg["hi_pct"])
    _atomic_write(ctx.out_dir / "trends.csv", lambda t: write_trends(t, rows))
    wnc_slopes = {r["network"]: r["slope"] for r in rows if r["measure"] == "wnc"}
    seg_slopes = {r["network"]: r["slope"] for r in rows if r["measure"] == "segregation"}
    return {
        "n_rows": len(rows),
        "wnc_slope": wnc_slopes,
        "segregation_slope": seg_slopes,
    }


# ---------------------------------------------------------------------------
# stage registry and runner
# ---------------------------------------------------------------------------


def _stages() -> list[StageDef]:
    def manifest_file(ctx: RunContext) -> list[tuple[str, Path]]:
        return [("manifest", ctx.cfg["_manifest_path"]), ("roi_table", ctx.roi_path)]

    def ts_inputs(ctx: RunContext) -> list[tuple[str, Path]]:
        subjects = zip(ctx.manifest.ids(), ctx.ts_paths())
        return [
            ("manifest", ctx.cfg["_manifest_path"]),
            ("roi_table", ctx.roi_path),
            *[(f"ts/{sid}", p) for sid, p in subjects],
        ]

    def features_in(ctx: RunContext) -> list[tuple[str, Path]]:
        return [("features", ctx.features_path)]

    def fc_inputs(ctx: RunContext) -> list[tuple[str, Path]]:
        return [
            ("manifest", ctx.cfg["_manifest_path"]),
            ("roi_table", ctx.roi_path),
            *[(f"fc/{sid}", ctx.fc_path(sid)) for sid in ctx.manifest.ids()],
        ]

    def group_z_in(ctx: RunContext) -> list[tuple[str, Path]]:
        return [("group_z", ctx.group_z_path)]

    return [
        StageDef(
            "ingest",
            ("timeseries_header",),
            manifest_file,
            lambda c: [c.out_dir / "cohort.csv", c.out_dir / "roi_table.csv"],
            _stage_ingest,
        ),
        StageDef(
            "entropy",
            ("entropy", "timeseries_header"),
            ts_inputs,
            lambda c: [c.features_path, c.features_path.with_name(c.features_path.name + ".params.json")],
            _stage_entropy,
        ),
        StageDef(
            "stage_cluster",
            ("stages", "seed"),
            features_in,
            lambda c: [c.out_dir / "stage_kcurve.csv", c.out_dir / "stage_partition.csv", c.out_dir / "stage_cluster.json"],
            _stage_stage_cluster,
        ),
        StageDef(
            "stage_classify",
            ("stages", "seed"),
            features_in,
            lambda c: [
                c.out_dir / "stage_classify.json",
                c.out_dir / "models" / "knn.json",
                c.out_dir / "models" / "forest.json",
                c.out_dir / "models" / "svm.json",
            ],
            _stage_stage_classify,
        ),
        StageDef(
            "fc_build",
            ("timeseries_header",),
            ts_inputs,
            lambda c: [c.fc_path(sid) for sid in c.manifest.ids()],
            _stage_fc_build,
        ),
        StageDef(
            "fc_scan",
            ("fc",),
            fc_inputs,
            lambda c: [c.out_dir / "fc_scan.csv"],
            _stage_fc_scan,
        ),
        StageDef(
            "fc_average",
            ("fc",),
            fc_inputs,
            lambda c: [c.out_dir / "fc_group_r.csv", c.group_z_path, c.out_dir / "fc_prevalence.csv"],
            _stage_fc_average,
        ),
        StageDef(
            "fc_export",
            (),
            lambda c: [("prevalence", c.out_dir / "fc_prevalence.csv"), ("roi_table", c.roi_path)],
            lambda c: [c.out_dir / "brain.node", c.out_dir / "brain.edge"],
            _stage_fc_export,
        ),
        StageDef(
            "networks_cluster",
            ("networks", "seed"),
            group_z_in,
            lambda c: [c.out_dir / "net_kcurve.csv", c.out_dir / "net_partition.csv", c.out_dir / "networks.json"],
            _stage_networks_cluster,
        ),
        StageDef(
            "networks_embed",
            ("networks", "seed"),
            lambda c: [("group_z", c.group_z_path), ("net_partition", c.out_dir / "net_partition.csv")],
            lambda c: [c.out_dir / "embedding.csv", c.out_dir / "embed.json"],
            _stage_networks_embed,
        ),
        StageDef(
            "netmetrics",
            ("fc",),
            fc_inputs,
            lambda c: [c.metrics_path],
            _stage_netmetrics,
        ),
        StageDef(
            "trends",
            ("trends",),
            lambda c: [("metrics", c.metrics_path)],
            lambda c: [c.out_dir / "trends.csv"],
            _stage_trends,
        ),
    ]


STAGE_ORDER = [s.name for s in _stages()]


def run(cfg: dict) -> dict:
    """Execute the full pipeline; returns the run report dict.

    The report maps stage name to its summary and is also written to
    ``out_dir/run_report.json``.  Stages whose inputs and config are
    unchanged from a previous run are skipped.
    """
    validate_config(cfg)
    manifest_path = Path(cfg["manifest"])
    manifest = load_manifest(manifest_path)
    if cfg["roi_table"] == "bundled":
        from importlib import resources

        ref = resources.files("rsfc") / "assets" / "roi160.csv"
        with resources.as_file(ref) as p:
            roi_path = Path(p)
            table = load_roi_table(roi_path)
    else:
        roi_path = Path(cfg["roi_table"])
        table = load_roi_table(roi_path)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = dict(cfg)
    cfg["_manifest_path"] = manifest_path
    ctx = RunContext(cfg=cfg, out_dir=out_dir, manifest=manifest, roi_path=roi_path, table=table)

    report: dict[str, dict] = {}
    for stage in _stages():
        fingerprint = _input_fingerprint(ctx, stage)
        cached = _try_cached(ctx, stage, fingerprint)
        if cached is not None:
            log.info("stage %-16s cached", stage.name)
            report[stage.name] = cached
            continue
        log.info("stage %-16s running", stage.name)
        try:
            summary = stage.compute(ctx)
        except (ConfigError, DataError):
            raise
        except Exception as exc:
            raise StageError(f"stage {stage.name} failed: {exc}") from exc
        _record_cache(ctx, stage, fingerprint, summary)
        report[stage.name] = summary

    _atomic_write(
        out_dir / "run_report.json",
        lambda t: t.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n"),
    )
    return report
