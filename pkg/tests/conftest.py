import hashlib
from pathlib import Path

import pytest

from rsfc import synth


def tree_digest(root: Path) -> dict[str, str]:
    """Relative path -> sha256 of contents, for whole-tree comparisons."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="session")
def tiny_cohort(tmp_path_factory) -> Path:
    """Small synthetic cohort shared by pipeline/CLI tests (10 subjects)."""
    root = tmp_path_factory.mktemp("tiny_cohort")
    spec = synth.SynthSpec(n_subjects=10, t_len=160, seed=99)
    synth.generate_cohort(root, spec)
    return root


@pytest.fixture()
def fast_config(tiny_cohort, tmp_path) -> dict:
    """Pipeline config tuned for runtime, not statistical quality."""
    return {
        "manifest": str(tiny_cohort / "manifest.csv"),
        "out_dir": str(tmp_path / "run"),
        "stages": {"n_restarts": 3, "forest_trees": 15, "svm_epochs": 40},
        "networks": {
            "n_restarts": 3,
            "tsne_perplexity": 12.0,
            "tsne_iters": 300,
        },
    }
