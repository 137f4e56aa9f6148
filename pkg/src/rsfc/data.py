"""Core data model and on-disk formats.

Everything the pipeline reads or writes goes through this module: cohort
manifests, per-subject time-series matrices, ROI tables, square connectivity
matrices, feature tables, partitions, embeddings, and trend tables.  All
writers are deterministic (no timestamps, stable ordering) and numeric text
uses the shortest representation that round-trips to the same float64, so
re-running a pipeline produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from rsfc.errors import DataError

__all__ = [
    "Subject",
    "Manifest",
    "RoiTable",
    "StageBin",
    "STAGES",
    "stage_of_age",
    "load_manifest",
    "write_manifest",
    "load_timeseries",
    "write_timeseries",
    "load_roi_table",
    "write_roi_table",
    "bundled_roi_table",
    "load_matrix",
    "write_matrix",
    "load_features",
    "write_features",
    "load_partition",
    "write_partition",
    "load_embedding",
    "write_embedding",
    "load_trends",
    "write_trends",
]


def fmt_float(v: float) -> str:
    """Shortest decimal string that parses back to exactly the same float64."""
    return repr(float(v))


# ---------------------------------------------------------------------------
# cohort manifest
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ("subject_id", "age_years", "timeseries_path")


@dataclass(frozen=True)
class Subject:
    subject_id: str
    age_years: float
    timeseries_path: str

    def resolve_path(self, root: Path) -> Path:
        p = Path(self.timeseries_path)
        return p if p.is_absolute() else root / p


@dataclass
class Manifest:
    """An ordered cohort: one row per subject, paths relative to ``root``."""

    subjects: list[Subject]
    root: Path

    def __len__(self) -> int:
        return len(self.subjects)

    def ages(self) -> np.ndarray:
        return np.array([s.age_years for s in self.subjects], dtype=np.float64)

    def ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
                raise DataError(
                    f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}"
                )
            subjects = []
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 3:
                    raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
                sid, age_s, ts = (f.strip() for f in row)
                if not sid:
                    raise DataError(f"{path}:{lineno}: empty subject_id")
                try:
                    age = float(age_s)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad age {age_s!r}") from exc
                if not math.isfinite(age) or not (0.0 < age < 150.0):
                    raise DataError(f"{path}:{lineno}: age {age} out of range")
                if not ts:
                    raise DataError(f"{path}:{lineno}: empty timeseries_path")
                subjects.append(Subject(sid, age, ts))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not subjects:
        raise DataError(f"{path}: manifest lists no subjects")
    ids = [s.subject_id for s in subjects]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"{path}: duplicate subject ids {dupes}")
    return Manifest(subjects, path.parent)


def write_manifest(path: str | Path, manifest: Manifest) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for s in manifest.subjects:
            w.writerow([s.subject_id, fmt_float(s.age_years), s.timeseries_path])


# ---------------------------------------------------------------------------
# time series and square matrices
# ---------------------------------------------------------------------------


def load_timeseries(path: str | Path, header: bool = False) -> np.ndarray:
    """Read a T x R time-series CSV (rows = time points, columns = ROIs)."""
    path = Path(path)
    try:
        ts = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2,
                        skiprows=1 if header else 0)
    except OSError as exc:
        raise DataError(f"cannot read time series {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed time-series CSV: {exc}") from exc
    if ts.shape[0] < 2:
        raise DataError(f"{path}: need at least 2 time points, got {ts.shape[0]}")
    if not np.all(np.isfinite(ts)):
        raise DataError(f"{path}: time series contains non-finite values")
    return ts


def write_timeseries(
    path: str | Path, values: np.ndarray, sig_digits: int | None = None
) -> None:
    """Write a T x R float matrix as headerless CSV.

    With the default ``sig_digits=None`` every value is written exactly
    (round-trips to the identical float64).  A small ``sig_digits`` trades
    precision for file size, which matters for bulk synthetic cohorts.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {values.shape}")
    _write_float_rows(Path(path), values, sig_digits)


def _write_float_rows(path: Path, values: np.ndarray, sig_digits: int | None) -> None:
    with open(path, "w") as fh:
        if sig_digits is None:
            for row in values.tolist():
                fh.write(",".join([repr(v) for v in row]))
                fh.write("\n")
        else:
            spec = f"%.{sig_digits}g"
            for row in values.tolist():
                fh.write(",".join([spec % v for v in row]))
                fh.write("\n")


def load_matrix(path: str | Path) -> np.ndarray:
    """Read a square float matrix from headerless CSV."""
    path = Path(path)
    try:
        mat = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read matrix {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed matrix CSV: {exc}") from exc
    if mat.shape[0] != mat.shape[1]:
        raise DataError(f"{path}: expected a square matrix, got {mat.shape}")
    return mat


def write_matrix(path: str | Path, mat: np.ndarray) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    _write_float_rows(Path(path), mat, None)


# ---------------------------------------------------------------------------
# ROI table
# ---------------------------------------------------------------------------

ROI_COLUMNS = ("roi_index", "x", "y", "z", "network", "name")


@dataclass
class RoiTable:
    """Region-of-interest metadata: MNI-style coordinates plus network labels.

    ``index`` is the 0-based ROI index matching time-series columns; rows are
    stored in index order.
    """

    index: np.ndarray  # (R,) int64, == arange(R)
    coords: np.ndarray  # (R, 3) float64
    network: list[str]
    name: list[str]

    def __len__(self) -> int:
        return int(self.index.shape[0])

    def networks(self) -> list[str]:
        """Distinct network labels in order of first appearance."""
        seen: dict[str, None] = {}
        for lab in self.network:
            seen.setdefault(lab)
        return list(seen)

    def network_members(self) -> dict[str, np.ndarray]:
        labels = np.asarray(self.network)
        return {net: np.flatnonzero(labels == net) for net in self.networks()}


def load_roi_table(path: str | Path) -> RoiTable:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != ROI_COLUMNS:
                raise DataError(f"{path}: ROI table header must be {','.join(ROI_COLUMNS)}")
            rows = [row for row in reader if row and any(f.strip() for f in row)]
    except OSError as exc:
        raise DataError(f"cannot read ROI table {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: ROI table is empty")
    idx = np.empty(len(rows), dtype=np.int64)
    coords = np.empty((len(rows), 3), dtype=np.float64)
    network: list[str] = []
    name: list[str] = []
    for k, row in enumerate(rows):
        if len(row) != 6:
            raise DataError(f"{path}: row {k + 2} has {len(row)} fields, expected 6")
        try:
            idx[k] = int(row[0])
            coords[k] = [float(row[1]), float(row[2]), float(row[3])]
        except ValueError as exc:
            raise DataError(f"{path}: row {k + 2}: {exc}") from exc
        net = row[4].strip()
        if not net:
            raise DataError(f"{path}: row {k + 2}: empty network label")
        network.append(net)
        name.append(row[5].strip())
    if not np.array_equal(idx, np.arange(len(rows))):
        raise DataError(f"{path}: roi_index must be 0..R-1 in order")
    if not np.all(np.isfinite(coords)):
        raise DataError(f"{path}: non-finite ROI coordinates")
    return RoiTable(idx, coords, network, name)


def write_roi_table(path: str | Path, table: RoiTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROI_COLUMNS)
        for k in range(len(table)):
            w.writerow(
                [
                    int(table.index[k]),
                    fmt_float(table.coords[k, 0]),
                    fmt_float(table.coords[k, 1]),
                    fmt_float(table.coords[k, 2]),
                    table.network[k],
                    table.name[k],
                ]
            )


def bundled_roi_table() -> RoiTable:
    """The packaged 160-ROI table with six functional network labels."""
    ref = resources.files("rsfc") / "assets" / "roi160.csv"
    with resources.as_file(ref) as p:
        return load_roi_table(p)


# ---------------------------------------------------------------------------
# developmental stages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageBin:
    stage_id: int
    code: str
    label: str
    lo: int  # inclusive, whole years
    hi: int  # inclusive, whole years


STAGES: tuple[StageBin, ...] = (
    StageBin(1, "YA", "young age", 7, 19),
    StageBin(2, "MA", "middle age", 20, 34),
    StageBin(3, "ML", "middle-late age", 35, 53),
    StageBin(4, "E", "elderly", 54, 89),
)


def stage_of_age(age_years: float) -> tuple[int, bool]:
    """Map an age to its developmental stage id.

    Ages are binned by whole years (floor).  Returns ``(stage_id, clamped)``
    where ``clamped`` is True when the age fell outside 7-89 and was assigned
    to the nearest stage.
    """
    if not math.isfinite(age_years):
        raise DataError(f"non-finite age {age_years}")
    yr = math.floor(age_years)
    if yr < STAGES[0].lo:
        return STAGES[0].stage_id, True
    if yr > STAGES[-1].hi:
        return STAGES[-1].stage_id, True
    for b in STAGES:
        if b.lo <= yr <= b.hi:
            return b.stage_id, False
    raise AssertionError("stage bins must cover 7..89")


# ---------------------------------------------------------------------------
# feature tables
# ---------------------------------------------------------------------------


def _feature_columns(n_features: int) -> list[str]:
    width = max(3, len(str(n_features - 1)))
    return [f"sampen_{i:0{width}d}" for i in range(n_features)]


def write_features(
    path: str | Path,
    subject_ids: list[str],
    ages: np.ndarray,
    features: np.ndarray,
    params: dict | None = None,
) -> None:
    """Write the per-subject feature table plus a JSON parameter sidecar.

    The sidecar lands at ``<path>.params.json`` and records how the features
    were computed so downstream stages can refuse mismatched inputs.
    """
    path = Path(path)
    features = np.asarray(features, dtype=np.float64)
    ages = np.asarray(ages, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != len(subject_ids):
        raise ValueError("features must be (n_subjects, n_features)")
    cols = _feature_columns(features.shape[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "age_years", *cols])
        for i, sid in enumerate(subject_ids):
            w.writerow([sid, fmt_float(ages[i]), *[fmt_float(v) for v in features[i]]])
    if params is not None:
        sidecar = path.with_name(path.name + ".params.json")
        with open(sidecar, "w") as fh:
            json.dump(params, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_features(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray, dict | None]:
    """Read a feature table; returns (ids, ages, features, params-or-None)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["subject_id", "age_years"]:
                raise DataError(f"{path}: bad feature-table header")
            n_feat = len(header) - 2
            ids: list[str] = []
            ages: list[float] = []
            rows: list[list[float]] = []
            for row in reader:
                if not row:
                    continue
                if len(row) != n_feat + 2:
                    raise DataError(f"{path}: ragged feature row for {row[0]!r}")
                ids.append(row[0])
                ages.append(float(row[1]))
                rows.append([float(v) for v in row[2:]])
    except OSError as exc:
        raise DataError(f"cannot read features {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed feature table: {exc}") from exc
    if not ids:
        raise DataError(f"{path}: feature table is empty")
    params = None
    sidecar = path.with_name(path.name + ".params.json")
    if sidecar.exists():
        with open(sidecar) as fh:
            params = json.load(fh)
    return ids, np.array(ages), np.array(rows), params


# ---------------------------------------------------------------------------
# partitions, embeddings, trend tables
# ---------------------------------------------------------------------------


def write_partition(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_index", "cluster_id"])
        for i, lab in enumerate(labels.tolist()):
            w.writerow([i, int(lab)])


def load_partition(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["item_index", "cluster_id"]:
                raise DataError(f"{path}: bad partition header")
            labels = []
            for k, row in enumerate(reader):
                if not row:
                    continue
                if int(row[0]) != k:
                    raise DataError(f"{path}: item_index must be 0..n-1 in order")
                labels.append(int(row[1]))
    except OSError as exc:
        raise DataError(f"cannot read partition {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed partition: {exc}") from exc
    return np.array(labels, dtype=np.int64)


def write_embedding(path: str | Path, coords: np.ndarray, labels: np.ndarray) -> None:
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] != labels.shape[0]:
        raise ValueError("embedding coords must be (n, 2) with matching labels")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_index", "dim1", "dim2", "cluster_id"])
        for i in range(coords.shape[0]):
            w.writerow([i, fmt_float(coords[i, 0]), fmt_float(coords[i, 1]), int(labels[i])])


def load_embedding(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["item_index", "dim1", "dim2", "cluster_id"]:
                raise DataError(f"{path}: bad embedding header")
            coords = []
            labels = []
            for k, row in enumerate(reader):
                if not row:
                    continue
                if int(row[0]) != k:
                    raise DataError(f"{path}: item_index must be 0..n-1 in order")
                coords.append([float(row[1]), float(row[2])])
                labels.append(int(row[3]))
    except OSError as exc:
        raise DataError(f"cannot read embedding {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed embedding: {exc}") from exc
    return np.array(coords, dtype=np.float64), np.array(labels, dtype=np.int64)


TREND_COLUMNS = ("network", "measure", "slope", "intercept", "r_squared", "n_used")


def write_trends(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TREND_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r["network"],
                    r["measure"],
                    fmt_float(r["slope"]),
                    fmt_float(r["intercept"]),
                    fmt_float(r["r_squared"]),
                    int(r["n_used"]),
                ]
            )


def load_trends(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != TREND_COLUMNS:
                raise DataError(f"{path}: bad trends header")
            out = []
            for row in reader:
                if not row:
                    continue
                out.append(
                    {
                        "network": row[0],
                        "measure": row[1],
                        "slope": float(row[2]),
                        "intercept": float(row[3]),
                        "r_squared": float(row[4]),
                        "n_used": int(row[5]),
                    }
                )
    except OSError as exc:
        raise DataError(f"cannot read trends {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed trends table: {exc}") from exc
    return out
