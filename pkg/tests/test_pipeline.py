"""End-to-end tests for the staged pipeline runner and its cache."""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest
from conftest import tree_digest

from rsfc import pipeline, synth
from rsfc.errors import ConfigError, DataError


FAST_OVERRIDES = {
    "stages": {"n_restarts": 3, "forest_trees": 15, "svm_epochs": 40},
    "networks": {"n_restarts": 3, "tsne_perplexity": 12.0, "tsne_iters": 300},
}


def _cfg(manifest: Path, out_dir: Path, extra: dict | None = None) -> dict:
    cfg = pipeline.merge_config(
        pipeline.DEFAULT_CONFIG,
        {"manifest": str(manifest), "out_dir": str(out_dir), **FAST_OVERRIDES},
    )
    return pipeline.merge_config(cfg, extra) if extra else cfg


@pytest.fixture(scope="module")
def base(tiny_cohort, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "run"
    cfg = _cfg(tiny_cohort / "manifest.csv", out)
    report = pipeline.run(cfg)
    return {"cfg": cfg, "out": out, "report": report, "manifest": tiny_cohort / "manifest.csv"}


# ---------------------------------------------------------------------------
# a complete run
# ---------------------------------------------------------------------------


def test_run_covers_every_stage(base):
    assert list(base["report"]) == pipeline.STAGE_ORDER
    assert len(pipeline.STAGE_ORDER) == 12


def test_run_report_file_matches_return(base):
    on_disk = json.loads((base["out"] / "run_report.json").read_text())
    assert on_disk == base["report"]


def test_key_artifacts_exist(base):
    for name in (
        "cohort.csv",
        "roi_table.csv",
        "features.csv",
        "fc_scan.csv",
        "fc_group_r.csv",
        "fc_group_z.csv",
        "fc_prevalence.csv",
        "brain.node",
        "brain.edge",
        "stage_partition.csv",
        "net_partition.csv",
        "embedding.csv",
        "metrics.csv",
        "trends.csv",
        "models/knn.json",
        "models/forest.json",
        "models/svm.json",
    ):
        assert (base["out"] / name).is_file(), name


def test_report_summaries_consistent(base):
    r = base["report"]
    assert r["ingest"]["n_subjects"] == 10
    assert r["ingest"]["n_rois"] == 160
    assert sum(r["ingest"]["stage_counts"].values()) == 10
    cls = r["stage_classify"]
    assert cls["train_size"] + cls["test_size"] == 10
    for model in ("knn", "forest", "svm"):
        assert 0.0 <= cls[model]["test_accuracy"] <= 1.0
    assert r["fc_export"]["n_nodes"] == 160
    assert r["fc_export"]["n_network_colors"] == 6
    assert 2 <= r["networks_cluster"]["selected_k"] <= 10
    assert 0.0 <= r["networks_embed"]["trustworthiness"] <= 1.0
    assert r["trends"]["n_rows"] == 18  # six networks x three measures


def test_cohort_file_matches_ingest_counts(base):
    lines = (base["out"] / "cohort.csv").read_text().strip().splitlines()
    assert lines[0] == "subject_id,age_years,stage_id,stage_clamped"
    stages = [int(row.split(",")[2]) for row in lines[1:]]
    counted = {str(s): stages.count(s) for s in sorted(set(stages))}
    assert counted == base["report"]["ingest"]["stage_counts"]


# ---------------------------------------------------------------------------
# caching and reproducibility
# ---------------------------------------------------------------------------


def test_rerun_is_cached_and_byte_identical(base):
    before = tree_digest(base["out"])
    mtime = (base["out"] / "features.csv").stat().st_mtime_ns
    report = pipeline.run(base["cfg"])
    assert report == base["report"]
    assert (base["out"] / "features.csv").stat().st_mtime_ns == mtime
    assert tree_digest(base["out"]) == before


def test_fresh_out_dir_is_byte_identical(base, tmp_path):
    out_b = tmp_path / "run_b"
    pipeline.run(_cfg(base["manifest"], out_b))
    assert tree_digest(out_b) == tree_digest(base["out"])


def test_thread_workers_do_not_change_output(base, tmp_path):
    out_b = tmp_path / "run_w2"
    pipeline.run(_cfg(base["manifest"], out_b, {"workers": 2}))
    assert tree_digest(out_b) == tree_digest(base["out"])


def test_deleted_artifact_is_recomputed(base, tmp_path):
    out_b = tmp_path / "copy"
    shutil.copytree(base["out"], out_b)
    original = (out_b / "fc_scan.csv").read_bytes()
    (out_b / "fc_scan.csv").unlink()
    pipeline.run(_cfg(base["manifest"], out_b))
    assert (out_b / "fc_scan.csv").read_bytes() == original


def test_seed_change_invalidates_only_seeded_stages(base, tmp_path):
    out_b = tmp_path / "copy"
    shutil.copytree(base["out"], out_b)
    fc_mtime = (out_b / "fc_group_z.csv").stat().st_mtime_ns
    pipeline.run(_cfg(base["manifest"], out_b, {"seed": 1}))
    # connectivity stages do not depend on the seed and stay cached
    assert (out_b / "fc_group_z.csv").stat().st_mtime_ns == fc_mtime
    # the embedding initialisation does, so its coordinates change
    assert (out_b / "embedding.csv").read_bytes() != (base["out"] / "embedding.csv").read_bytes()


def test_missing_timeseries_raises(tmp_path):
    synth.generate_cohort(tmp_path / "c", synth.SynthSpec(n_subjects=3, t_len=32, seed=1))
    victims = sorted((tmp_path / "c" / "ts").glob("*.csv"))
    victims[1].unlink()
    with pytest.raises(DataError):
        pipeline.run(_cfg(tmp_path / "c" / "manifest.csv", tmp_path / "run"))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _valid_cfg() -> dict:
    return pipeline.merge_config(
        pipeline.DEFAULT_CONFIG, {"manifest": "m.csv", "out_dir": "out"}
    )


@pytest.mark.parametrize(
    "override",
    [
        {"surprise": 1},
        {"entropy": {"window": 3}},
        {"manifest": None},
        {"out_dir": None},
        {"seed": "zero"},
        {"workers": 0},
        {"entropy": {"m": 0}},
        {"entropy": {"r_factor": 0.0}},
        {"fc": {"threshold": 1.5}},
        {"fc": {"fisher_eps": 0.0}},
        {"fc": {"scan_start": 0.6, "scan_stop": 0.1}},
        {"stages": {"k_min": 5, "k_max": 2}},
        {"stages": {"test_fraction": 1.0}},
        {"stages": {"pca_variance": 0.0}},
        {"stages": {"svm_class_weight": "heavy"}},
        {"networks": {"k": 1}},
        {"networks": {"k_min": 1}},
        {"trends": {"lo_pct": 99.0, "hi_pct": 1.0}},
    ],
)
def test_validate_config_rejects(override):
    cfg = pipeline.merge_config(_valid_cfg(), override)
    with pytest.raises(ConfigError):
        pipeline.validate_config(cfg)


def test_validate_config_accepts_defaults():
    pipeline.validate_config(_valid_cfg())
    pipeline.validate_config(
        pipeline.merge_config(_valid_cfg(), {"networks": {"k": 6}})
    )


def test_merge_config_is_recursive_and_pure():
    base = {"a": {"b": 1, "c": 2}, "d": 3}
    out = pipeline.merge_config(base, {"a": {"c": 9}})
    assert out == {"a": {"b": 1, "c": 9}, "d": 3}
    assert base["a"]["c"] == 2


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"manifest": "m.csv", "out_dir": "o", "seed": 3}))
    cfg = pipeline.load_config(path)
    assert cfg["seed"] == 3
    assert cfg["entropy"]["m"] == 2  # defaults filled in
    assert cfg["networks"]["k"] == "auto"


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    with pytest.raises(ConfigError):
        pipeline.load_config(bad)
    listy = tmp_path / "list.json"
    listy.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        pipeline.load_config(listy)
    with pytest.raises(ConfigError):
        pipeline.load_config(tmp_path / "absent.json")
