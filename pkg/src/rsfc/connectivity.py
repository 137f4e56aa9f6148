"""Functional connectivity matrices and their exports.

Builds per-subject Pearson correlation matrices from ROI time series, maps
them to Fisher z, thresholds/binarizes them into adjacency matrices, averages
across a cohort, and writes the node/edge file pair consumed by surface
visualisation tools (whitespace-delimited ``.node`` / ``.edge`` text files).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from rsfc.data import RoiTable, fmt_float
from rsfc.errors import DataError

__all__ = [
    "DEFAULT_EDGE_THRESHOLD",
    "FISHER_EPS",
    "pearson_matrix",
    "fisher_z",
    "z_matrix",
    "binarize",
    "scan_thresholds",
    "write_scan_table",
    "group_mean",
    "edge_prevalence",
    "write_node_file",
    "write_edge_file",
    "load_node_file",
    "load_edge_file",
]

DEFAULT_EDGE_THRESHOLD = 0.3
FISHER_EPS = 1e-7


def pearson_matrix(ts: np.ndarray) -> np.ndarray:
    """Pearson correlation between the columns of a (T, R) recording.

    The result is exactly symmetric with a unit diagonal and entries clipped
    to [-1, 1]; columns with zero variance cannot be correlated and raise
    DataError.
    """
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 2 or ts.shape[0] < 2:
        raise ValueError(f"expected a (T>=2, R) array, got shape {ts.shape}")
    sd = np.std(ts, axis=0)
    dead = np.flatnonzero(sd == 0.0)
    if dead.size:
        raise DataError(f"zero-variance columns cannot be correlated: {dead.tolist()}")
    r = np.corrcoef(ts, rowvar=False)
    r = np.asarray(r, dtype=np.float64)
    r = 0.5 * (r + r.T)
    np.clip(r, -1.0, 1.0, out=r)
    np.fill_diagonal(r, 1.0)
    return r


def fisher_z(r: np.ndarray | float, eps: float = FISHER_EPS) -> np.ndarray | float:
    """Fisher r-to-z transform, ``arctanh`` with the argument kept off +/-1.

    Correlations are clamped into [-1 + eps, 1 - eps] before the transform so
    perfect correlations map to a large finite value instead of infinity.
    Implemented as ``copysign(arctanh(|r|), r)`` so the map is exactly odd.
    """
    arr = np.asarray(r, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0):
        raise ValueError("correlations must lie in [-1, 1]")
    mag = np.minimum(np.abs(arr), 1.0 - eps)
    z = np.copysign(np.arctanh(mag), arr)
    if np.isscalar(r) or arr.ndim == 0:
        return float(z)
    return z


def z_matrix(r: np.ndarray, eps: float = FISHER_EPS) -> np.ndarray:
    """Fisher-z connectivity matrix with the self-connection diagonal zeroed."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    z = fisher_z(r, eps=eps)
    np.fill_diagonal(z, 0.0)
    return z


def binarize(r: np.ndarray, threshold: float = DEFAULT_EDGE_THRESHOLD) -> np.ndarray:
    """0/1 adjacency: edges where correlation strictly exceeds the threshold.

    The diagonal is always 0 (no self-edges).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    b = (r > threshold).astype(np.int64)
    np.fill_diagonal(b, 0)
    return b


def _edge_count(b: np.ndarray) -> int:
    iu = np.triu_indices(b.shape[0], k=1)
    return int(np.sum(b[iu]))


def scan_thresholds(
    corr_mats: list[np.ndarray], thresholds: np.ndarray
) -> list[dict]:
    """Edge statistics across a cohort for each candidate threshold.

    Returns one row per threshold with the mean/min/max suprathreshold edge
    count over subjects and the mean edge density (fraction of the R*(R-1)/2
    possible undirected edges).
    """
    if not corr_mats:
        raise ValueError("need at least one correlation matrix")
    n = corr_mats[0].shape[0]
    n_possible = n * (n - 1) // 2
    rows = []
    for t in np.asarray(thresholds, dtype=np.float64):
        counts = np.array([_edge_count(binarize(m, float(t))) for m in corr_mats])
        rows.append(
            {
                "threshold": float(t),
                "mean_edge_count": float(np.mean(counts)),
                "mean_density": float(np.mean(counts) / n_possible),
                "min_edge_count": int(np.min(counts)),
                "max_edge_count": int(np.max(counts)),
            }
        )
    return rows


def write_scan_table(path: str | Path, rows: list[dict]) -> None:
    cols = ("threshold", "mean_edge_count", "mean_density", "min_edge_count", "max_edge_count")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    [
                        fmt_float(r["threshold"]),
                        fmt_float(r["mean_edge_count"]),
                        fmt_float(r["mean_density"]),
                        str(int(r["min_edge_count"])),
                        str(int(r["max_edge_count"])),
                    ]
                )
                + "\n"
            )


def group_mean(mats: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of same-shaped square matrices."""
    if not mats:
        raise ValueError("need at least one matrix")
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise DataError(f"matrix shapes differ: {m.shape} vs {shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for m in mats:
        acc += m
    return acc / len(mats)


def edge_prevalence(
    corr_mats: list[np.ndarray], threshold: float = DEFAULT_EDGE_THRESHOLD
) -> np.ndarray:
    """Fraction of subjects in which each edge survives the threshold."""
    return group_mean([binarize(m, threshold).astype(np.float64) for m in corr_mats])


# ---------------------------------------------------------------------------
# node / edge files for ball-and-stick brain rendering
# ---------------------------------------------------------------------------


def write_node_file(
    path: str | Path,
    table: RoiTable,
    colors: np.ndarray,
    sizes: np.ndarray | float = 1.0,
) -> None:
    """Write the 6-column node file: x y z color size label.

    ``colors`` are small positive integers (cluster / module ids) driving the
    colour map; ``sizes`` set ball radii and default to 1 for every node.
    Labels must be whitespace-free; embedded whitespace is replaced by '_'.
    """
    colors = np.asarray(colors)
    if colors.shape[0] != len(table):
        raise ValueError("one color per ROI required")
    if np.any(colors < 1):
        raise ValueError("node colors are 1-based positive integers")
    if np.isscalar(sizes):
        sizes = np.full(len(table), float(sizes))
    sizes = np.asarray(sizes, dtype=np.float64)
    with open(path, "w") as fh:
        for k in range(len(table)):
            label = table.name[k] or f"roi{k}"
            label = "_".join(label.split())
            fh.write(
                "\t".join(
                    [
                        fmt_float(table.coords[k, 0]),
                        fmt_float(table.coords[k, 1]),
                        fmt_float(table.coords[k, 2]),
                        str(int(colors[k])),
                        fmt_float(sizes[k]),
                        label,
                    ]
                )
                + "\n"
            )


def write_edge_file(path: str | Path, mat: np.ndarray) -> None:
    """Write a square connectivity matrix as a whitespace-delimited edge file.

    The matrix must be symmetric with a zero diagonal; values are written
    exactly (round-trip to identical float64).
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if not np.array_equal(mat, mat.T):
        raise ValueError("edge matrix must be symmetric")
    if np.any(np.diag(mat) != 0.0):
        raise ValueError("edge matrix diagonal must be zero")
    with open(path, "w") as fh:
        for row in mat.tolist():
            fh.write("\t".join([repr(v) for v in row]) + "\n")


def load_node_file(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Parse a node file back into (coords, colors, sizes, labels)."""
    coords = []
    colors = []
    sizes = []
    labels = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 6:
                    raise DataError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
                coords.append([float(parts[0]), float(parts[1]), float(parts[2])])
                colors.append(int(float(parts[3])))
                sizes.append(float(parts[4]))
                labels.append(parts[5])
    except OSError as exc:
        raise DataError(f"cannot read node file {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed node file: {exc}") from exc
    return (
        np.array(coords, dtype=np.float64),
        np.array(colors, dtype=np.int64),
        np.array(sizes, dtype=np.float64),
        labels,
    )


def load_edge_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        mat = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read edge file {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed edge file: {exc}") from exc
    if mat.shape[0] != mat.shape[1]:
        raise DataError(f"{path}: edge matrix must be square, got {mat.shape}")
    if np.any(np.diag(mat) != 0.0):
        raise DataError(f"{path}: edge matrix diagonal must be zero")
    return mat
