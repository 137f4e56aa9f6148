"""Synthetic cohorts with planted, recoverable structure.

The generator plants connectivity curves in Fisher-z space: every ROI pair
inside a network shares the correlation ``tanh(z_base + z_slope * (age -
age_ref))`` and every cross-network pair follows a single between-network
curve.  Because the planted curves are affine in z, the ground-truth slope of
each network's within-connectivity against age is exactly the planted
``z_slope``, which makes end-to-end recovery checks sharp.

Time series are stationary AR(1) processes driven by correlated innovations.
The AR coefficient is shared by all ROIs of a subject, which leaves the
zero-lag cross-correlations equal to the innovation correlations, while its
increase with age makes signals smoother (lower sample entropy) for older
subjects.

Also provided: small planted-structure fixtures (Gaussian blobs, noisy block
profile matrices) used by the validation suites.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rsfc.data import Manifest, RoiTable, Subject, bundled_roi_table, write_manifest, write_timeseries
from rsfc.errors import ConfigError

__all__ = [
    "SynthSpec",
    "DEFAULT_NETWORK_CURVES",
    "generate_cohort",
    "gaussian_blobs",
    "block_profile_matrix",
]

# (z_base, z_slope per year) for the six bundled networks; the default
# scenario plants a declining default-mode curve, a rising occipital one and
# a flat cerebellar one, with the rest in between
DEFAULT_NETWORK_CURVES: dict[str, tuple[float, float]] = {
    "DMN": (0.55, -0.004),
    "FPN": (0.50, -0.001),
    "CON": (0.48, 0.001),
    "SMN": (0.52, 0.0005),
    "ON": (0.35, 0.003),
    "CN": (0.45, 0.0),
}


@dataclass
class SynthSpec:
    n_subjects: int = 120
    t_len: int = 2000
    seed: int = 0
    age_lo: float = 7.0
    age_hi: float = 89.0
    age_ref: float = 48.0
    z_between_base: float = 0.18
    z_between_slope: float = -0.0005
    network_curves: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_NETWORK_CURVES)
    )
    ar_base: float = 0.35  # AR(1) coefficient at age_lo
    ar_slope: float = 0.004  # increase per year of age
    sig_digits: int = 6  # precision of the written time-series CSVs

    def validate(self) -> None:
        if self.n_subjects < 2:
            raise ConfigError("n_subjects must be >= 2")
        if self.t_len < 16:
            raise ConfigError("t_len must be >= 16")
        if not self.age_lo < self.age_hi:
            raise ConfigError("age_lo must be below age_hi")
        phi_max = self.ar_base + self.ar_slope * (self.age_hi - self.age_lo)
        if not (0.0 <= self.ar_base < 1.0 and 0.0 <= phi_max < 1.0):
            raise ConfigError("AR(1) coefficient must stay in [0, 1) over the age range")


def _planted_correlation(
    table: RoiTable, spec: SynthSpec, age: float
) -> np.ndarray:
    """Target correlation matrix for one subject (before PSD repair)."""
    n = len(table)
    da = age - spec.age_ref
    b = math.tanh(spec.z_between_base + spec.z_between_slope * da)
    r = np.full((n, n), b, dtype=np.float64)
    for net, members in table.network_members().items():
        base, slope = spec.network_curves[net]
        w = math.tanh(base + slope * da)
        r[np.ix_(members, members)] = w
    np.fill_diagonal(r, 1.0)
    return r


def _sampling_root(r: np.ndarray) -> np.ndarray:
    """Matrix L with L L^T equal to r after PSD repair and re-normalisation.

    Eigenvalues are clipped at 1e-6 and the repaired matrix is rescaled back
    to a unit diagonal, so the sampled data always has the planted structure
    up to the (tiny) repair.
    """
    vals, vecs = np.linalg.eigh(r)
    vals = np.maximum(vals, 1e-6)
    root = vecs * np.sqrt(vals)[None, :]
    diag = np.sum(root * root, axis=1)
    return root / np.sqrt(diag)[:, None]


def _subject_timeseries(
    table: RoiTable, spec: SynthSpec, age: float, rng: np.random.Generator
) -> np.ndarray:
    r = _planted_correlation(table, spec, age)
    root = _sampling_root(r)
    innov = rng.standard_normal((spec.t_len, len(table))) @ root.T
    phi = spec.ar_base + spec.ar_slope * (age - spec.age_lo)
    x = np.empty_like(innov)
    # start from the stationary distribution so correlations hold from t=0
    x[0] = innov[0] / math.sqrt(1.0 - phi * phi)
    for t in range(1, spec.t_len):
        x[t] = phi * x[t - 1] + innov[t]
    return x


def generate_cohort(
    out_dir: str | Path,
    spec: SynthSpec | None = None,
    table: RoiTable | None = None,
) -> tuple[Manifest, dict]:
    """Write a synthetic cohort under ``out_dir``.

    Produces ``manifest.csv``, one time-series CSV per subject under ``ts/``,
    and ``ground_truth.json`` recording the planted curves and the derived
    expected slopes.  Returns the manifest and the ground-truth dict.
    """
    spec = spec or SynthSpec()
    spec.validate()
    table = table or bundled_roi_table()
    missing = [n for n in table.networks() if n not in spec.network_curves]
    if missing:
        raise ConfigError(f"no planted curve for networks {missing}")

    out_dir = Path(out_dir)
    ts_dir = out_dir / "ts"
    ts_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    ages = rng.uniform(spec.age_lo, spec.age_hi, size=spec.n_subjects)
    subject_seeds = rng.integers(0, 2**63 - 1, size=spec.n_subjects)

    width = max(3, len(str(spec.n_subjects - 1)))
    subjects = []
    for i in range(spec.n_subjects):
        sid = f"subj_{i:0{width}d}"
        rel = f"ts/{sid}.csv"
        x = _subject_timeseries(table, spec, float(ages[i]), np.random.default_rng(int(subject_seeds[i])))
        write_timeseries(ts_dir / f"{sid}.csv", x, sig_digits=spec.sig_digits)
        subjects.append(Subject(sid, float(ages[i]), rel))
    manifest = Manifest(subjects, out_dir)
    write_manifest(out_dir / "manifest.csv", manifest)

    truth = {
        "seed": spec.seed,
        "n_subjects": spec.n_subjects,
        "t_len": spec.t_len,
        "age_lo": spec.age_lo,
        "age_hi": spec.age_hi,
        "age_ref": spec.age_ref,
        "ar": {"base": spec.ar_base, "slope": spec.ar_slope},
        "between": {
            "z_base": spec.z_between_base,
            "z_slope": spec.z_between_slope,
        },
        "networks": {
            net: {
                "z_base": base,
                "z_slope": slope,
                "expected_wnc_slope": slope,
                "expected_bnc_slope": spec.z_between_slope,
            }
            for net, (base, slope) in sorted(spec.network_curves.items())
        },
    }
    with open(out_dir / "ground_truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest, truth


# ---------------------------------------------------------------------------
# planted fixtures for validation suites
# ---------------------------------------------------------------------------


def gaussian_blobs(
    counts: list[int] | tuple[int, ...],
    n_features: int,
    separation: float,
    seed: int = 0,
    spread: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian clusters with guaranteed center distances.

    Cluster ``c`` sits at ``separation`` along feature axis ``c`` (so any two
    centers are ``separation * sqrt(2)`` apart regardless of the seed) with
    standard deviation ``spread`` in every dimension.  Returns (x, labels).
    """
    counts = [int(c) for c in counts]
    k = len(counts)
    if k < 1 or min(counts) < 1:
        raise ValueError("counts must be positive")
    if n_features < k:
        raise ValueError("need at least one feature axis per cluster")
    rng = np.random.default_rng(seed)
    total = sum(counts)
    x = np.empty((total, n_features), dtype=np.float64)
    y = np.empty(total, dtype=np.int64)
    at = 0
    for c, n_c in enumerate(counts):
        center = np.zeros(n_features)
        center[c] = separation
        x[at : at + n_c] = center + spread * rng.standard_normal((n_c, n_features))
        y[at : at + n_c] = c
        at += n_c
    return x, y


def block_profile_matrix(
    sizes: list[int] | tuple[int, ...],
    within: list[float] | tuple[float, ...],
    between: float,
    noise_sd: float,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric block matrix whose rows cluster by block.

    Block ``g`` has internal value ``within[g]`` and ``between`` elsewhere,
    plus symmetric Gaussian noise; the diagonal is zero.  Returns (matrix,
    block labels), with rows usable directly as clustering profiles.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) != len(within):
        raise ValueError("one within value per block required")
    n = sum(sizes)
    rng = np.random.default_rng(seed)
    m = np.full((n, n), float(between), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    at = 0
    for g, s in enumerate(sizes):
        m[at : at + s, at : at + s] = float(within[g])
        labels[at : at + s] = g
        at += s
    noise = rng.normal(0.0, noise_sd, size=(n, n))
    m += np.triu(noise, 1) + np.triu(noise, 1).T
    np.fill_diagonal(m, 0.0)
    return m, labels
