"""Network-level connectivity summaries and age trends.

Within-network connectivity (WNC) averages the Fisher-z edges among a
network's ROIs, between-network connectivity (BNC) averages the edges from
those ROIs to everything outside, and segregation is their normalised
difference ``(WNC - BNC) / WNC`` — 1 when a network talks only to itself, 0
when inside and outside are indistinguishable, negative when outside
coupling dominates.  Cohort trends are ordinary least squares of each
measure against age after percentile-based outlier trimming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rsfc.errors import DataError

__all__ = [
    "within_network_connectivity",
    "between_network_connectivity",
    "segregation",
    "network_metrics",
    "percentile_mask",
    "FitResult",
    "linear_fit",
    "age_trends",
]


def _check_square(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {z.shape}")
    return z


def _check_members(members: np.ndarray, n: int) -> np.ndarray:
    members = np.asarray(members, dtype=np.int64)
    if members.ndim != 1 or members.size == 0:
        raise ValueError("members must be a non-empty 1-D index array")
    if np.unique(members).size != members.size:
        raise ValueError("duplicate member indices")
    if members.min() < 0 or members.max() >= n:
        raise ValueError("member index out of range")
    return members


def within_network_connectivity(z: np.ndarray, members: np.ndarray) -> float:
    """Mean edge weight over unordered ROI pairs inside the network.

    A single-ROI network has no internal pairs and yields NaN.
    """
    z = _check_square(z)
    members = _check_members(members, z.shape[0])
    if members.size < 2:
        return float("nan")
    sub = z[np.ix_(members, members)]
    iu = np.triu_indices(members.size, k=1)
    return float(np.mean(sub[iu]))


def between_network_connectivity(z: np.ndarray, members: np.ndarray) -> float:
    """Mean edge weight over (inside, outside) ROI pairs.

    NaN when the network spans every ROI (no outside).
    """
    z = _check_square(z)
    members = _check_members(members, z.shape[0])
    outside = np.setdiff1d(np.arange(z.shape[0]), members)
    if outside.size == 0:
        return float("nan")
    return float(np.mean(z[np.ix_(members, outside)]))


def segregation(wnc: float, bnc: float) -> float:
    """Normalised within/between difference ``(wnc - bnc) / wnc``.

    NaN when ``wnc`` is zero or either input is NaN (the ratio is undefined;
    callers count and exclude these rather than failing).
    """
    if math.isnan(wnc) or math.isnan(bnc):
        return float("nan")
    if wnc == 0.0:
        return float("nan")
    return (wnc - bnc) / wnc


def network_metrics(
    z: np.ndarray, membership: dict[str, np.ndarray]
) -> dict[str, tuple[float, float, float]]:
    """Per-network (wnc, bnc, segregation) for one connectivity matrix."""
    out = {}
    for net, members in membership.items():
        w = within_network_connectivity(z, members)
        b = between_network_connectivity(z, members)
        out[net] = (w, b, segregation(w, b))
    return out


def percentile_mask(
    values: np.ndarray, lo_pct: float = 2.5, hi_pct: float = 97.5
) -> np.ndarray:
    """Boolean mask of values inside the [lo, hi] percentile band.

    Percentiles use linear interpolation; NaN values are always masked out.
    """
    if not 0.0 <= lo_pct < hi_pct <= 100.0:
        raise ValueError(f"need 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}")
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if not np.any(finite):
        return np.zeros_like(finite)
    lo, hi = np.percentile(values[finite], [lo_pct, hi_pct])
    return finite & (values >= lo) & (values <= hi)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n: int


def linear_fit(x: np.ndarray, y: np.ndarray) -> FitResult:
    """Ordinary least squares line through (x, y).

    Zero-variance y fits a horizontal line with r^2 = 0 by convention;
    zero-variance x leaves the slope undefined and raises DataError.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be matching 1-D arrays")
    if x.shape[0] < 2:
        raise DataError("need at least two points for a line")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in regression inputs")
    xm = x - np.mean(x)
    ym = y - np.mean(y)
    sxx = float(np.dot(xm, xm))
    if sxx == 0.0:
        raise DataError("x has zero variance; slope undefined")
    sxy = float(np.dot(xm, ym))
    syy = float(np.dot(ym, ym))
    slope = sxy / sxx
    intercept = float(np.mean(y)) - slope * float(np.mean(x))
    r2 = 0.0 if syy == 0.0 else (sxy * sxy) / (sxx * syy)
    return FitResult(float(slope), float(intercept), float(r2), int(x.shape[0]))


def age_trends(
    ages: np.ndarray,
    per_subject: dict[str, np.ndarray],
    lo_pct: float = 2.5,
    hi_pct: float = 97.5,
) -> list[dict]:
    """Trend rows for each (network, measure) series against age.

    ``per_subject`` maps ``network`` to an (n_subjects, 3) array of
    (wnc, bnc, segregation) rows aligned with ``ages``.  Outliers are trimmed
    per series on the measure values only (ages stay untouched); undefined
    segregation values are excluded the same way and reflected in ``n_used``.
    """
    ages = np.asarray(ages, dtype=np.float64)
    rows = []
    for net, mat in per_subject.items():
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (ages.shape[0], 3):
            raise ValueError(f"{net}: expected (n_subjects, 3) metric rows")
        for col, measure in enumerate(("wnc", "bnc", "segregation")):
            vals = mat[:, col]
            keep = percentile_mask(vals, lo_pct, hi_pct)
            if int(np.sum(keep)) < 2:
                raise DataError(f"{net}/{measure}: fewer than 2 values after trimming")
            fit = linear_fit(ages[keep], vals[keep])
            rows.append(
                {
                    "network": net,
                    "measure": measure,
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r_squared": fit.r_squared,
                    "n_used": fit.n,
                }
            )
    return rows
