"""Command-line interface.

``rsfc run`` drives the full cached pipeline from a JSON config; the other
subcommands expose individual steps (synthesis, entropy features, clustering,
classification, connectivity, network metrics) for piecemeal use.  Exit
codes: 0 success, 2 configuration error, 3 data error, 4 computation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from rsfc import classify, clustering, connectivity, embedding, netmetrics, pipeline, synth
from rsfc.data import (
    bundled_roi_table,
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
    write_trends,
)
from rsfc.entropy import sampen_features
from rsfc.errors import ConfigError, DataError, RsfcError, StageError

log = logging.getLogger("rsfc")


def _roi_table(arg: str):
    return bundled_roi_table() if arg == "bundled" else load_roi_table(arg)


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = synth.SynthSpec(
        n_subjects=args.subjects,
        t_len=args.tlen,
        seed=args.seed,
        age_lo=args.age_lo,
        age_hi=args.age_hi,
        sig_digits=args.sig_digits,
    )
    manifest, _ = synth.generate_cohort(args.out, spec)
    log.info("wrote %d subjects under %s", len(manifest), args.out)
    return 0


def _cmd_entropy(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    feats = []
    for s in manifest.subjects:
        ts = load_timeseries(s.resolve_path(manifest.root), header=args.header)
        feats.append(sampen_features(ts, m=args.m, r_factor=args.r_factor, tau=args.tau))
    feats = np.vstack(feats)
    params = {"m": args.m, "tau": args.tau, "r_factor": args.r_factor, "n_rois": feats.shape[1]}
    write_features(args.out, manifest.ids(), manifest.ages(), feats, params=params)
    log.info("wrote %s (%d x %d)", args.out, feats.shape[0], feats.shape[1])
    return 0


def _cmd_stages_cluster(args: argparse.Namespace) -> int:
    ids, ages, feats, _ = load_features(args.features)
    x = np.column_stack([pipeline._impute_nonfinite(feats), ages])
    x = pipeline._zscore_columns(x)
    ks = list(range(args.k_min, args.k_max + 1))
    elbow, curve = clustering.select_k(x, ks, seed=args.seed, n_restarts=args.restarts)
    part = clustering.kmeans(x, elbow.k, seed=args.seed, n_restarts=args.restarts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline._write_kcurve(out / "stage_kcurve.csv", curve)
    write_partition(out / "stage_partition.csv", part.labels)
    age_bins = np.array([stage_of_age(a)[0] for a in ages])
    summary = {
        "selected_k": elbow.k,
        "degenerate_elbow": elbow.degenerate,
        "inertia": part.inertia,
        "ari_vs_age_bins": clustering.adjusted_rand_index(part.labels, age_bins),
    }
    (out / "stage_cluster.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("selected k=%d (ari vs age bins %.3f)", elbow.k, summary["ari_vs_age_bins"])
    return 0


def _cmd_stages_classify(args: argparse.Namespace) -> int:
    ids, ages, feats, _ = load_features(args.features)
    x = pipeline._impute_nonfinite(feats)
    y = np.array([stage_of_age(a)[0] for a in ages])
    pca = embedding.pca_fit(x, variance_fraction=args.pca_variance)
    xp = embedding.pca_transform(pca, x)
    train, test = classify.stratified_split(y, args.test_fraction, seed=args.seed)
    out = Path(args.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    summary = {"pca_components": int(pca.components.shape[0])}
    classes = np.unique(y)
    models = {
        "knn": classify.KnnClassifier(k=min(args.knn_k, train.size)),
        "forest": classify.RandomForest(n_trees=args.trees, seed=args.seed),
        "svm": classify.LinearSvm(class_weight="balanced" if args.balanced_svm else None),
    }
    for name, model in models.items():
        model.fit(xp[train], y[train])
        pred = model.predict(xp[test])
        classify.save_model(out / "models" / f"{name}.json", model)
        summary[name] = {
            "test_accuracy": classify.accuracy(y[test], pred),
            "recall": {
                str(int(c)): (None if np.isnan(r) else float(r))
                for c, r in zip(classes, classify.per_class_recall(y[test], pred, classes))
            },
        }
    (out / "stage_classify.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name in models:
        log.info("%s test accuracy: %.3f", name, summary[name]["test_accuracy"])
    return 0


def _cmd_fc_build(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in manifest.subjects:
        ts = load_timeseries(s.resolve_path(manifest.root), header=args.header)
        r = connectivity.pearson_matrix(ts)
        write_matrix(out / f"r_{s.subject_id}.csv", r)
    log.info("wrote %d correlation matrices under %s", len(manifest), out)
    return 0


def _scan_values(start: float, stop: float, step: float) -> list[float]:
    vals = []
    k = 0
    t = start
    while t <= stop + 1e-12:
        vals.append(round(t, 10))
        k += 1
        t = start + k * step
    return vals


def _cmd_fc_scan(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    mats = [load_matrix(Path(args.fc_dir) / f"r_{sid}.csv") for sid in manifest.ids()]
    rows = connectivity.scan_thresholds(mats, np.array(_scan_values(args.start, args.stop, args.step)))
    connectivity.write_scan_table(args.out, rows)
    log.info("wrote %s (%d thresholds)", args.out, len(rows))
    return 0


def _cmd_fc_export(args: argparse.Namespace) -> int:
    table = _roi_table(args.roi)
    mat = load_matrix(args.matrix)
    if mat.shape[0] != len(table):
        raise DataError(f"matrix is {mat.shape[0]}x{mat.shape[0]} but ROI table has {len(table)} rows")
    nets = table.networks()
    color_of = {net: i + 1 for i, net in enumerate(nets)}
    colors = np.array([color_of[n] for n in table.network])
    connectivity.write_node_file(args.out_node, table, colors, sizes=1.0)
    edge = mat.copy()
    np.fill_diagonal(edge, 0.0)
    connectivity.write_edge_file(args.out_edge, edge)
    log.info("wrote %s and %s", args.out_node, args.out_edge)
    return 0


def _cmd_networks_cluster(args: argparse.Namespace) -> int:
    z = load_matrix(args.matrix)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.k == "auto":
        ks = list(range(args.k_min, args.k_max + 1))
        elbow, curve = clustering.select_k(z, ks, seed=args.seed, n_restarts=args.restarts)
        k = elbow.k
    else:
        k = int(args.k)
        curve = clustering.distortion_curve(z, [k], seed=args.seed, n_restarts=args.restarts)
    part = clustering.kmeans(z, k, seed=args.seed, n_restarts=args.restarts)
    pipeline._write_kcurve(out / "net_kcurve.csv", curve)
    write_partition(out / "net_partition.csv", part.labels)
    log.info("clustered %d profiles into k=%d", z.shape[0], k)
    return 0


def _cmd_networks_embed(args: argparse.Namespace) -> int:
    z = load_matrix(args.matrix)
    labels = (
        load_partition(args.partition)
        if args.partition
        else np.zeros(z.shape[0], dtype=np.int64)
    )
    res = embedding.tsne(
        z,
        perplexity=args.perplexity,
        n_iter=args.iters,
        seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embedding(out / "embedding.csv", res.embedding, labels)
    info = {
        "final_kl": res.final_kl,
        "kl_checkpoints": [[int(i), float(v)] for i, v in res.kl_checkpoints],
        "trustworthiness": float(embedding.trustworthiness(z, res.embedding, n_neighbors=5)),
    }
    (out / "embed.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    log.info("final KL %.4f, trustworthiness %.3f", res.final_kl, info["trustworthiness"])
    return 0


def _cmd_networks_trends(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    table = _roi_table(args.roi)
    membership = table.network_members()
    per_net: dict[str, list[list[float]]] = {net: [] for net in table.networks()}
    for s in manifest.subjects:
        r = load_matrix(Path(args.fc_dir) / f"r_{s.subject_id}.csv")
        z = connectivity.z_matrix(r)
        for net, (w, b, seg) in netmetrics.network_metrics(z, membership).items():
            per_net[net].append([w, b, seg])
    rows = netmetrics.age_trends(
        manifest.ages(),
        {net: np.array(v) for net, v in per_net.items()},
        lo_pct=args.lo_pct,
        hi_pct=args.hi_pct,
    )
    write_trends(args.out, rows)
    log.info("wrote %s (%d rows)", args.out, len(rows))
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.workers is not None:
        cfg["workers"] = args.workers
    pipeline.validate_config(cfg)
    report = pipeline.run(cfg)
    log.info("run complete: %d stages, report at %s", len(report), Path(cfg["out_dir"]) / "run_report.json")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.out_dir) / "run_report.json"
    try:
        report = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read run report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc

    lines = []
    ing = report.get("ingest", {})
    lines.append(
        f"cohort: {ing.get('n_subjects', '?')} subjects, {ing.get('n_rois', '?')} ROIs, "
        f"stage counts {ing.get('stage_counts', {})}"
    )
    sc = report.get("stage_cluster", {})
    lines.append(
        f"stage clustering: k={sc.get('selected_k', '?')}, "
        f"ARI vs age bins {sc.get('ari_vs_age_bins', float('nan')):.3f}"
    )
    cl = report.get("stage_classify", {})
    for name in ("knn", "forest", "svm"):
        if name in cl:
            lines.append(f"{name} test accuracy: {cl[name]['test_accuracy']:.3f}")
    nc = report.get("networks_cluster", {})
    lines.append(
        f"network clustering: k={nc.get('selected_k', '?')}, "
        f"ARI vs ROI networks {nc.get('ari_vs_roi_networks', float('nan')):.3f}"
    )
    emb = report.get("networks_embed", {})
    if emb:
        lines.append(
            f"embedding: final KL {emb.get('final_kl', float('nan')):.4f}, "
            f"trustworthiness {emb.get('trustworthiness', float('nan')):.3f}"
        )
    tr = report.get("trends", {})
    for net, slope in sorted(tr.get("wnc_slope", {}).items()):
        lines.append(f"wnc slope vs age, {net}: {slope:+.5f} per year")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rsfc",
        description="Resting-state connectivity analysis: entropy features, "
        "stage clustering/classification, connectivity matrices, network "
        "metrics and age trends.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic cohort with planted structure")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--subjects", type=int, default=120)
    sp.add_argument("--tlen", type=int, default=2000, help="time points per subject")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--age-lo", type=float, default=7.0)
    sp.add_argument("--age-hi", type=float, default=89.0)
    sp.add_argument("--sig-digits", type=int, default=6, help="CSV precision for time series")
    sp.set_defaults(func=_cmd_synth)

    ep = sub.add_parser("entropy", help="per-ROI sample entropy features for a cohort")
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--out", required=True, help="output features CSV")
    ep.add_argument("--m", type=int, default=2)
    ep.add_argument("--tau", type=int, default=1)
    ep.add_argument("--r-factor", type=float, default=0.2)
    ep.add_argument("--header", action="store_true", help="time-series CSVs have a header row")
    ep.set_defaults(func=_cmd_entropy)

    st = sub.add_parser("stages", help="developmental-stage analyses").add_subparsers(
        dest="subcommand", required=True
    )
    scp = st.add_parser("cluster", help="cluster subjects by entropy features and age")
    scp.add_argument("--features", required=True)
    scp.add_argument("--out-dir", required=True)
    scp.add_argument("--k-min", type=int, default=1)
    scp.add_argument("--k-max", type=int, default=8)
    scp.add_argument("--restarts", type=int, default=10)
    scp.add_argument("--seed", type=int, default=0)
    scp.set_defaults(func=_cmd_stages_cluster)

    scf = st.add_parser("classify", help="train stage classifiers on entropy features")
    scf.add_argument("--features", required=True)
    scf.add_argument("--out-dir", required=True)
    scf.add_argument("--seed", type=int, default=0)
    scf.add_argument("--test-fraction", type=float, default=0.2)
    scf.add_argument("--pca-variance", type=float, default=0.9)
    scf.add_argument("--trees", type=int, default=100)
    scf.add_argument("--knn-k", type=int, default=5)
    scf.add_argument("--balanced-svm", action="store_true", default=True)
    scf.set_defaults(func=_cmd_stages_classify)

    fc = sub.add_parser("fc", help="functional connectivity matrices").add_subparsers(
        dest="subcommand", required=True
    )
    fb = fc.add_parser("build", help="per-subject correlation matrices")
    fb.add_argument("--manifest", required=True)
    fb.add_argument("--out-dir", required=True)
    fb.add_argument("--header", action="store_true")
    fb.set_defaults(func=_cmd_fc_build)

    fs = fc.add_parser("scan", help="edge counts across candidate thresholds")
    fs.add_argument("--manifest", required=True)
    fs.add_argument("--fc-dir", required=True)
    fs.add_argument("--out", required=True)
    fs.add_argument("--start", type=float, default=0.1)
    fs.add_argument("--stop", type=float, default=0.6)
    fs.add_argument("--step", type=float, default=0.05)
    fs.set_defaults(func=_cmd_fc_scan)

    fe = fc.add_parser("export", help="write node/edge files for brain rendering")
    fe.add_argument("--matrix", required=True, help="square edge matrix CSV")
    fe.add_argument("--roi", default="bundled", help="ROI table CSV or 'bundled'")
    fe.add_argument("--out-node", required=True)
    fe.add_argument("--out-edge", required=True)
    fe.set_defaults(func=_cmd_fc_export)

    nw = sub.add_parser("networks", help="ROI network structure and trends").add_subparsers(
        dest="subcommand", required=True
    )
    ncp = nw.add_parser("cluster", help="cluster ROI connectivity profiles")
    ncp.add_argument("--matrix", required=True, help="square connectivity matrix CSV")
    ncp.add_argument("--out-dir", required=True)
    ncp.add_argument("--k", default="auto")
    ncp.add_argument("--k-min", type=int, default=2)
    ncp.add_argument("--k-max", type=int, default=10)
    ncp.add_argument("--restarts", type=int, default=10)
    ncp.add_argument("--seed", type=int, default=0)
    ncp.set_defaults(func=_cmd_networks_cluster)

    nep = nw.add_parser("embed", help="2-D embedding of ROI profiles")
    nep.add_argument("--matrix", required=True)
    nep.add_argument("--partition", help="partition CSV for point labels")
    nep.add_argument("--out-dir", required=True)
    nep.add_argument("--perplexity", type=float, default=30.0)
    nep.add_argument("--iters", type=int, default=1000)
    nep.add_argument("--seed", type=int, default=0)
    nep.set_defaults(func=_cmd_networks_embed)

    ntp = nw.add_parser("trends", help="network metrics and linear age trends")
    ntp.add_argument("--manifest", required=True)
    ntp.add_argument("--fc-dir", required=True)
    ntp.add_argument("--roi", default="bundled")
    ntp.add_argument("--out", required=True, help="output trends CSV")
    ntp.add_argument("--lo-pct", type=float, default=2.5)
    ntp.add_argument("--hi-pct", type=float, default=97.5)
    ntp.set_defaults(func=_cmd_networks_trends)

    rp = sub.add_parser("run", help="run the full pipeline from a JSON config")
    rp.add_argument("--config", required=True)
    rp.add_argument("--seed", type=int, help="override config seed")
    rp.add_argument("--out", help="override config out_dir")
    rp.add_argument("--workers", type=int, help="override config workers")
    rp.set_defaults(func=_cmd_run)

    rep = sub.add_parser("report", help="summarise a finished run")
    rep.add_argument("--out-dir", required=True)
    rep.set_defaults(func=_cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except RsfcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
