"""Dimensionality reduction: PCA and exact t-SNE, plus embedding diagnostics.

The t-SNE here is the exact O(n^2) formulation: per-point bandwidths found by
binary search to hit the target perplexity, early exaggeration of the input
affinities, and momentum gradient descent with adaptive per-parameter gains.
KL divergence against the (non-exaggerated) input affinities is recorded at
fixed checkpoints so convergence is observable; once exaggeration is removed
the recorded KL should not increase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PcaModel",
    "pca_fit",
    "pca_transform",
    "TsneResult",
    "tsne",
    "trustworthiness",
    "knn_label_agreement",
]


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (p, d) orthonormal rows
    explained_variance: np.ndarray  # (p,)
    explained_ratio: np.ndarray  # (p,) fractions of total variance


def pca_fit(
    x: np.ndarray,
    n_components: int | None = None,
    variance_fraction: float | None = None,
) -> PcaModel:
    """Principal components via SVD of the centered data.

    Exactly one of ``n_components`` and ``variance_fraction`` must be given;
    the latter keeps the smallest number of leading components whose
    cumulative explained-variance ratio reaches the fraction.
    """
    if (n_components is None) == (variance_fraction is None):
        raise ValueError("specify exactly one of n_components / variance_fraction")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"expected (n>=2, d) data, got shape {x.shape}")
    n, d = x.shape
    mean = np.mean(x, axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = (s * s) / (n - 1)
    total = float(np.sum(var))
    ratio = var / total if total > 0 else np.zeros_like(var)

    if n_components is not None:
        if not 1 <= n_components <= min(n, d):
            raise ValueError(f"n_components must be in 1..{min(n, d)}")
        p = n_components
    else:
        if not 0.0 < variance_fraction <= 1.0:
            raise ValueError("variance_fraction must be in (0, 1]")
        csum = np.cumsum(ratio)
        p = int(np.searchsorted(csum, variance_fraction - 1e-12) + 1)
        p = min(p, var.shape[0])

    comps = vt[:p].copy()
    # fix the SVD sign ambiguity: largest-magnitude loading positive
    for row in comps:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaModel(mean, comps, var[:p].copy(), ratio[:p].copy())


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# exact t-SNE
# ---------------------------------------------------------------------------


@dataclass
class TsneResult:
    embedding: np.ndarray  # (n, 2)
    kl_checkpoints: list[tuple[int, float]]  # (iteration, KL vs true P)
    final_kl: float


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    s = np.sum(x * x, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _conditional_p(dists: np.ndarray, perplexity: float, tol: float = 1e-3) -> np.ndarray:
    """Row-stochastic affinities with per-row bandwidth matched to perplexity."""
    n = dists.shape[0]
    target = math.log(perplexity)
    p = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        di = np.delete(dists[i], i)
        beta = 1.0
        beta_min = -np.inf
        beta_max = np.inf
        for _ in range(64):
            w = np.exp(-di * beta)
            sw = float(np.sum(w))
            if sw <= 0.0:
                h = 0.0
                pi = np.zeros_like(di)
            else:
                pi = w / sw
                # Shannon entropy in nats of the conditional distribution
                h = float(math.log(sw) + beta * np.dot(di, pi))
            diff = h - target
            if abs(diff) < tol:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else 0.5 * (beta + beta_max)
            else:
                beta_max = beta
                beta = beta * 0.5 if beta_min == -np.inf else 0.5 * (beta + beta_min)
        row = np.insert(pi, i, 0.0)
        p[i] = row
    return p


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne(
    x: np.ndarray,
    perplexity: float = 30.0,
    n_iter: int = 1000,
    learning_rate: float = 200.0,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    initial_dims: int = 50,
    seed: int = 0,
    checkpoint_every: int = 50,
) -> TsneResult:
    """Embed rows of ``x`` into 2-D.

    Inputs with more than ``initial_dims`` features are first reduced by PCA.
    The returned checkpoints hold the KL divergence of the embedding against
    the true (non-exaggerated) affinities every ``checkpoint_every``
    iterations and at the final one.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n, d) data, got shape {x.shape}")
    n = x.shape[0]
    if n < 5:
        raise ValueError("need at least 5 points")
    if not 1.0 <= perplexity <= (n - 1) / 3.0:
        raise ValueError(f"perplexity must be in [1, (n-1)/3], got {perplexity}")
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")

    if x.shape[1] > initial_dims:
        x = pca_transform(pca_fit(x, n_components=initial_dims), x)

    d = _pairwise_sq_dists(x)
    p_cond = _conditional_p(d, perplexity)
    p = (p_cond + p_cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)
    np.fill_diagonal(p, 0.0)
    p_true = p.copy()

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    inc = np.zeros_like(y)
    gains = np.ones_like(y)

    p_run = p_true * early_exaggeration
    checkpoints: list[tuple[int, float]] = []
    for it in range(1, n_iter + 1):
        if it == exaggeration_iters + 1:
            # the objective changes here; stale velocity and per-coordinate
            # gains refer to the exaggerated surface and would overshoot
            p_run = p_true
            inc[:] = 0.0
            gains[:] = 1.0
        num = 1.0 / (1.0 + _pairwise_sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = num / np.sum(num)
        np.maximum(q, 1e-12, out=q)

        w = (p_run - q) * num
        grad = 4.0 * (np.sum(w, axis=1)[:, None] * y - w @ y)

        momentum = 0.5 if it <= exaggeration_iters else 0.8
        same_sign = np.sign(grad) == np.sign(inc)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        inc = momentum * inc - learning_rate * gains * grad
        y = y + inc
        y = y - np.mean(y, axis=0)

        if it % checkpoint_every == 0 or it == n_iter:
            checkpoints.append((it, _kl_divergence(p_true, q)))

    # report the KL of the final coordinates, not of the last pre-update Q
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / np.sum(num), 1e-12)
    final_kl = _kl_divergence(p_true, q)
    if checkpoints and checkpoints[-1][0] == n_iter:
        checkpoints[-1] = (n_iter, final_kl)
    else:
        checkpoints.append((n_iter, final_kl))
    return TsneResult(y, checkpoints, final_kl)


# ---------------------------------------------------------------------------
# embedding quality metrics
# ---------------------------------------------------------------------------


def trustworthiness(x_high: np.ndarray, y_low: np.ndarray, n_neighbors: int = 5) -> float:
    """How much of each low-dimensional neighbourhood is trustworthy.

    Penalises points that appear among the k nearest neighbours in the
    embedding but are far in the original space, weighted by how far down
    the original ranking they sit; 1.0 means no intruders.
    """
    x_high = np.asarray(x_high, dtype=np.float64)
    y_low = np.asarray(y_low, dtype=np.float64)
    n = x_high.shape[0]
    if y_low.shape[0] != n:
        raise ValueError("row counts differ between spaces")
    k = int(n_neighbors)
    if not 1 <= k < (2 * n - 1) / 3:
        raise ValueError(f"n_neighbors must satisfy 1 <= k < (2n-1)/3, got {k}")

    dx = _pairwise_sq_dists(x_high)
    dy = _pairwise_sq_dists(y_low)
    np.fill_diagonal(dx, np.inf)
    np.fill_diagonal(dy, np.inf)

    order_x = np.argsort(dx, axis=1, kind="stable")
    rank_x = np.empty_like(order_x)
    rows = np.arange(n)[:, None]
    # 1-based ranks; the inf diagonal pushes self to rank n, never queried
    rank_x[rows, order_x] = np.broadcast_to(np.arange(1, n + 1), (n, n))

    nn_y = np.argsort(dy, axis=1, kind="stable")[:, :k]
    penalty = 0
    for i in range(n):
        r = rank_x[i, nn_y[i]]
        penalty += int(np.sum(np.maximum(r - k, 0)))
    return 1.0 - 2.0 * penalty / (n * k * (2 * n - 3 * k - 1))


def knn_label_agreement(coords: np.ndarray, labels: np.ndarray, k: int = 5) -> float:
    """Leave-one-out k-NN accuracy of ``labels`` in the embedded space.

    Each point is classified by majority vote of its k nearest other points;
    vote ties break toward the smaller label.
    """
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    n = coords.shape[0]
    if labels.shape[0] != n:
        raise ValueError("labels must match coords rows")
    if not 1 <= k < n:
        raise ValueError(f"k must be in 1..{n - 1}")
    d = _pairwise_sq_dists(coords)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    correct = 0
    uniq = np.unique(labels)
    for i in range(n):
        votes = labels[nn[i]]
        counts = {int(u): int(np.sum(votes == u)) for u in uniq}
        best = max(sorted(counts), key=lambda u: counts[u])
        if best == labels[i]:
            correct += 1
    return correct / n
