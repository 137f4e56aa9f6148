import numpy as np
import pytest

from rsfc import embedding, synth


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


def spectrum_data(seed=0, n=200, scales=(10.0, 3.0, 1.0, 0.1)):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, len(scales))) * np.asarray(scales)


def test_pca_components_orthonormal():
    model = embedding.pca_fit(spectrum_data(), n_components=4)
    gram = model.components @ model.components.T
    assert np.allclose(gram, np.eye(4), atol=1e-10)


def test_pca_ratios_non_increasing_and_normalised():
    model = embedding.pca_fit(spectrum_data(), n_components=4)
    r = model.explained_ratio
    assert np.all(np.diff(r) <= 1e-15)
    assert float(np.sum(r)) == pytest.approx(1.0, abs=1e-12)


def test_pca_variance_fraction_keeps_smallest_prefix():
    x = spectrum_data(seed=3)
    full = embedding.pca_fit(x, n_components=4)
    csum = np.cumsum(full.explained_ratio)
    for frac in (0.5, 0.9, 0.99):
        model = embedding.pca_fit(x, variance_fraction=frac)
        p = model.components.shape[0]
        assert csum[p - 1] >= frac - 1e-12
        if p > 1:
            assert csum[p - 2] < frac  # p-1 components would not have sufficed


def test_pca_variance_fraction_one_keeps_everything():
    x = spectrum_data(seed=4)
    model = embedding.pca_fit(x, variance_fraction=1.0)
    assert model.components.shape[0] == 4


def test_pca_transform_centers_training_mean():
    x = spectrum_data(seed=1)
    model = embedding.pca_fit(x, n_components=2)
    z = embedding.pca_transform(model, x.mean(axis=0, keepdims=True))
    assert np.allclose(z, 0.0, atol=1e-10)


def test_pca_sign_convention():
    model = embedding.pca_fit(spectrum_data(seed=2), n_components=3)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_reconstructs_low_rank_data():
    rng = np.random.default_rng(7)
    basis = rng.standard_normal((2, 6))
    x = rng.standard_normal((50, 2)) @ basis + 5.0
    model = embedding.pca_fit(x, n_components=2)
    recon = embedding.pca_transform(model, x) @ model.components + model.mean
    assert np.allclose(recon, x, atol=1e-8)


def test_pca_argument_validation():
    x = spectrum_data()
    with pytest.raises(ValueError):
        embedding.pca_fit(x)  # neither selector
    with pytest.raises(ValueError):
        embedding.pca_fit(x, n_components=2, variance_fraction=0.5)
    with pytest.raises(ValueError):
        embedding.pca_fit(x, n_components=5)
    with pytest.raises(ValueError):
        embedding.pca_fit(x, variance_fraction=0.0)


# ---------------------------------------------------------------------------
# t-SNE
# ---------------------------------------------------------------------------


def three_blobs(seed=0):
    return synth.gaussian_blobs([12, 12, 12], 6, 10.0, seed=seed)


def test_tsne_separates_blobs():
    x, y = three_blobs()
    res = embedding.tsne(x, perplexity=8.0, n_iter=400, learning_rate=50.0, seed=0)
    assert res.embedding.shape == (36, 2)
    assert embedding.trustworthiness(x, res.embedding, n_neighbors=5) >= 0.9
    assert embedding.knn_label_agreement(res.embedding, y, k=5) >= 0.95


def test_tsne_kl_checkpoints_shape_and_tail():
    # learning rate scaled down to suit the small point count
    x, _ = three_blobs(seed=1)
    res = embedding.tsne(x, perplexity=8.0, n_iter=400, learning_rate=50.0, seed=1)
    iters = [it for it, _ in res.kl_checkpoints]
    assert iters == list(range(50, 401, 50))
    assert res.final_kl == res.kl_checkpoints[-1][1]
    post = [kl for it, kl in res.kl_checkpoints if it >= 250]
    assert all(b <= a + 1e-9 for a, b in zip(post, post[1:]))
    assert all(np.isfinite(kl) for _, kl in res.kl_checkpoints)


def test_tsne_deterministic_per_seed():
    x, _ = three_blobs(seed=2)
    a = embedding.tsne(x, perplexity=6.0, n_iter=120, seed=5)
    b = embedding.tsne(x, perplexity=6.0, n_iter=120, seed=5)
    c = embedding.tsne(x, perplexity=6.0, n_iter=120, seed=6)
    assert np.array_equal(a.embedding, b.embedding)
    assert not np.array_equal(a.embedding, c.embedding)


def test_tsne_perplexity_bounds():
    x, _ = three_blobs()
    with pytest.raises(ValueError):
        embedding.tsne(x, perplexity=(x.shape[0] - 1) / 3.0 + 0.1)
    with pytest.raises(ValueError):
        embedding.tsne(x, perplexity=0.5)
    with pytest.raises(ValueError):
        embedding.tsne(x[:4], perplexity=1.0)


def test_tsne_reduces_wide_input_like_pca():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((40, 80))  # d > initial_dims triggers reduction
    res = embedding.tsne(x, perplexity=5.0, n_iter=60, initial_dims=10, seed=0)
    assert res.embedding.shape == (40, 2)


# ---------------------------------------------------------------------------
# embedding quality scores
# ---------------------------------------------------------------------------


def test_trustworthiness_identity_is_one():
    x = np.random.default_rng(0).standard_normal((30, 4))
    assert embedding.trustworthiness(x, x.copy(), n_neighbors=5) == 1.0


def test_trustworthiness_frozen_line_cases():
    # four collinear points; values hand-derived from the rank penalties
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    swapped = np.array([[1.0], [0.0], [2.0], [3.0]])
    assert embedding.trustworthiness(x, swapped, n_neighbors=1) == 0.75
    shuffled = np.array([[0.0], [3.0], [1.0], [2.0]])
    assert embedding.trustworthiness(x, shuffled, n_neighbors=1) == 0.25


def test_knn_label_agreement_frozen_case():
    coords = np.array([[0.0], [1.0], [2.0]])
    # vote ties resolve toward the smaller label
    assert embedding.knn_label_agreement(coords, np.array([0, 1, 0]), k=2) == (
        pytest.approx(2 / 3)
    )


def test_knn_label_agreement_separated_blobs():
    x, y = three_blobs(seed=4)
    assert embedding.knn_label_agreement(x, y, k=5) == 1.0
