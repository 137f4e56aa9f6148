"""K-means clustering with elbow-based model selection.

Everything here is deterministic given a seed: k-means++ seeding, Lloyd
iterations with farthest-point repair of empty clusters, best-of-N restarts,
and knee detection on the distortion curve (largest vertical gap below the
chord joining the curve endpoints, after normalising both axes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KMeansResult",
    "ElbowResult",
    "kmeans",
    "distortion_curve",
    "find_elbow",
    "select_k",
    "adjusted_rand_index",
    "canonicalize_labels",
]


@dataclass
class KMeansResult:
    labels: np.ndarray  # (n,) int64, ids 0..k-1 in order of first appearance
    centers: np.ndarray  # (k, d)
    inertia: float  # sum of squared distances to assigned centers
    n_iter: int
    converged: bool
    inertia_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class ElbowResult:
    k: int
    degenerate: bool  # curve was flat or linear; k is the smallest candidate
    gaps: tuple[float, ...]  # per-candidate distance below the chord


def canonicalize_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber cluster ids by order of first appearance (0, 1, 2, ...)."""
    labels = np.asarray(labels)
    mapping: dict[int, int] = {}
    out = np.empty(labels.shape[0], dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances."""
    d = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(centers * centers, axis=1)[None, :]
        - 2.0 * (x @ centers.T)
    )
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = float(np.sum(closest))
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            centers[c] = x[int(rng.integers(n))]
            continue
        probs = closest / total
        idx = int(rng.choice(n, p=probs))
        centers[c] = x[idx]
        closest = np.minimum(closest, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(
    x: np.ndarray, centers: np.ndarray, max_iter: int
) -> tuple[np.ndarray, np.ndarray, float, int, bool, list[float]]:
    n, _ = x.shape
    k = centers.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        new_labels = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), new_labels]

        # empty-cluster repair: hand the farthest point its own cluster
        counts = np.bincount(new_labels, minlength=k)
        repaired = False
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_cost))
            new_labels[far] = c
            point_cost[far] = 0.0
            centers[c] = x[far]
            counts = np.bincount(new_labels, minlength=k)
            repaired = True

        history.append(float(np.sum(point_cost)))
        if not repaired and np.array_equal(new_labels, labels):
            converged = True
            labels = new_labels
            break
        labels = new_labels
        for c in range(k):
            if counts[c] > 0:
                centers[c] = np.mean(x[labels == c], axis=0)
    return labels, centers, history[-1], it, converged, history


def kmeans(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    n_restarts: int = 10,
    max_iter: int = 300,
) -> KMeansResult:
    """Best-of-``n_restarts`` k-means, deterministic for a given seed.

    Labels in the result are canonical: cluster 0 is the cluster of the first
    data row, cluster 1 the next distinct one, and so on, with centers
    reordered to match.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n, d) data, got shape {x.shape}")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")

    root = np.random.default_rng(seed)
    restart_seeds = root.integers(0, 2**63 - 1, size=n_restarts)
    best: KMeansResult | None = None
    for rs in restart_seeds:
        rng = np.random.default_rng(int(rs))
        centers0 = _kmeanspp(x, k, rng)
        labels, centers, inertia, n_iter, converged, hist = _lloyd(x, centers0.copy(), max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, n_iter, converged, hist)
    assert best is not None

    canon = canonicalize_labels(best.labels)
    order: dict[int, int] = {}
    for old, new in zip(best.labels.tolist(), canon.tolist()):
        order.setdefault(old, new)
    # with duplicate points a cluster can end empty; park its center after
    # the occupied ones, keeping old-id order
    spare = iter(range(len(order), k))
    for c in range(k):
        if c not in order:
            order[c] = next(spare)
    new_centers = np.empty_like(best.centers)
    for old, new in order.items():
        new_centers[new] = best.centers[old]
    best.labels = canon
    best.centers = new_centers
    return best


def distortion_curve(
    x: np.ndarray,
    ks: list[int] | np.ndarray,
    seed: int = 0,
    n_restarts: int = 10,
    max_iter: int = 300,
) -> list[dict]:
    """Distortion (inertia) and within/between dispersion ratio per k.

    Each candidate k gets an independent seeded run so the curve is
    reproducible; rows come back sorted by k.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    ks = sorted(int(k) for k in ks)
    if len(set(ks)) != len(ks):
        raise ValueError("duplicate k candidates")
    total_ss = float(np.sum((x - np.mean(x, axis=0)) ** 2))
    root = np.random.default_rng(seed)
    k_seeds = {k: int(s) for k, s in zip(ks, root.integers(0, 2**63 - 1, size=len(ks)))}
    rows = []
    for k in ks:
        res = kmeans(x, k, seed=k_seeds[k], n_restarts=n_restarts, max_iter=max_iter)
        between = total_ss - res.inertia
        ratio = float("inf") if between <= 0 else res.inertia / between
        rows.append(
            {
                "k": k,
                "inertia": res.inertia,
                "within_between_ratio": float(ratio),
                "converged": res.converged,
            }
        )
    return rows


def find_elbow(ks: np.ndarray | list[int], values: np.ndarray | list[float]) -> ElbowResult:
    """Knee of a decreasing distortion curve.

    Both axes are normalised to [0, 1]; the knee is the point with the
    largest vertical drop below the straight line joining the endpoints.
    Ties break toward smaller k.  A flat or linear curve has no knee: the
    smallest k is returned with ``degenerate=True``.
    """
    ks = np.asarray(ks, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if ks.shape != values.shape or ks.ndim != 1 or ks.shape[0] < 1:
        raise ValueError("ks and values must be matching 1-D arrays")
    if np.any(np.diff(ks) <= 0):
        raise ValueError("ks must be strictly increasing")
    if ks.shape[0] < 3:
        return ElbowResult(int(ks[0]), True, tuple(0.0 for _ in ks))

    x = (ks - ks[0]) / (ks[-1] - ks[0])
    vspan = values.max() - values.min()
    if vspan <= 0.0:
        return ElbowResult(int(ks[0]), True, tuple(0.0 for _ in ks))
    y = (values - values.min()) / vspan
    chord = y[0] + (y[-1] - y[0]) * x
    gaps = chord - y

    best = int(np.argmax(gaps))
    if gaps[best] <= 1e-9:
        return ElbowResult(int(ks[0]), True, tuple(float(g) for g in gaps))
    return ElbowResult(int(ks[best]), False, tuple(float(g) for g in gaps))


def select_k(
    x: np.ndarray,
    ks: list[int] | np.ndarray,
    seed: int = 0,
    n_restarts: int = 10,
    max_iter: int = 300,
) -> tuple[ElbowResult, list[dict]]:
    """Distortion curve plus knee selection in one call."""
    curve = distortion_curve(x, ks, seed=seed, n_restarts=n_restarts, max_iter=max_iter)
    elbow = find_elbow([r["k"] for r in curve], [r["inertia"] for r in curve])
    return elbow, curve


def adjusted_rand_index(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError("partitions must label the same items")
    n = a.shape[0]
    if n == 0:
        raise ValueError("empty partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na = int(ai.max()) + 1
    nb = int(bi.max()) + 1
    cont = np.zeros((na, nb), dtype=np.int64)
    np.add.at(cont, (ai, bi), 1)

    def comb2(v: np.ndarray) -> np.ndarray:
        return v * (v - 1) // 2

    sum_ij = int(np.sum(comb2(cont)))
    sum_a = int(np.sum(comb2(cont.sum(axis=1))))
    sum_b = int(np.sum(comb2(cont.sum(axis=0))))
    total = n * (n - 1) // 2
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
