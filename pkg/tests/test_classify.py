"""Tests for the classifiers, the stratified split, and the metrics."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rsfc import classify, synth
from rsfc.data import DataError


# ---------------------------------------------------------------------------
# stratified_split
# ---------------------------------------------------------------------------


def test_split_sizes_round_and_clamp():
    # class counts 10 / 5 / 2 at fraction 0.25: round(2.5) -> 2 (banker's),
    # round(1.25) -> 1, round(0.5) -> 0 clamped up to 1
    labels = np.repeat([0, 1, 2], [10, 5, 2])
    train, test = classify.stratified_split(labels, 0.25, seed=0)
    test_counts = [int(np.sum(labels[test] == c)) for c in (0, 1, 2)]
    assert test_counts == [2, 1, 1]
    assert train.shape[0] + test.shape[0] == labels.shape[0]


def test_split_disjoint_exhaustive_sorted():
    labels = np.repeat([0, 1, 2, 3], [12, 9, 7, 4])
    train, test = classify.stratified_split(labels, 0.3, seed=11)
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.union1d(train, test), np.arange(labels.shape[0]))
    assert np.array_equal(train, np.sort(train))
    assert np.array_equal(test, np.sort(test))


def test_split_deterministic_per_seed():
    labels = np.repeat([0, 1], [20, 10])
    a = classify.stratified_split(labels, 0.25, seed=5)
    b = classify.stratified_split(labels, 0.25, seed=5)
    c = classify.stratified_split(labels, 0.25, seed=6)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])


def test_split_singleton_class_stays_in_train():
    labels = np.array([0] * 8 + [1])
    train, test = classify.stratified_split(labels, 0.25, seed=0)
    assert 8 in train
    assert np.all(labels[test] == 0)


def test_split_no_class_vanishes():
    labels = np.repeat([0, 1], [2, 2])
    train, test = classify.stratified_split(labels, 0.9, seed=0)
    for c in (0, 1):
        assert np.any(labels[train] == c)
        assert np.any(labels[test] == c)


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_split_rejects_bad_fraction(frac):
    with pytest.raises(ValueError):
        classify.stratified_split(np.array([0, 0, 1, 1]), frac)


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------


def test_knn_separable_blobs():
    x, y = synth.gaussian_blobs([30, 30], 4, 4.0, seed=5)
    train, test = classify.stratified_split(y, 0.25, seed=5)
    model = classify.KnnClassifier(k=5).fit(x[train], y[train])
    assert classify.accuracy(y[test], model.predict(x[test])) == 1.0


def test_knn_k1_reproduces_training_labels():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(25, 3))
    y = rng.integers(0, 3, size=25)
    model = classify.KnnClassifier(k=1).fit(x, y)
    assert np.array_equal(model.predict(x), y)


def test_knn_vote_tie_prefers_smaller_class_label():
    model = classify.KnnClassifier(k=2).fit(np.array([[0.0], [2.0]]), np.array([0, 1]))
    assert model.predict(np.array([[1.0]]))[0] == 0


def test_knn_distance_tie_resolves_to_earlier_row():
    # both training points are exactly distance 1 from the query; the stable
    # sort keeps the first row, whose label is 1
    model = classify.KnnClassifier(k=1).fit(np.array([[0.0], [2.0]]), np.array([1, 0]))
    assert model.predict(np.array([[1.0]]))[0] == 1


def test_knn_persistence_round_trip(tmp_path):
    x, y = synth.gaussian_blobs([20, 20], 3, 3.0, seed=2)
    model = classify.KnnClassifier(k=3).fit(x, y)
    path = tmp_path / "knn.json"
    classify.save_model(path, model)
    loaded = classify.load_model(path)
    probe = np.random.default_rng(0).normal(size=(15, 3))
    assert np.array_equal(model.predict(probe), loaded.predict(probe))


def test_knn_validation():
    with pytest.raises(ValueError):
        classify.KnnClassifier(k=0)
    with pytest.raises(ValueError):
        classify.KnnClassifier(k=5).fit(np.zeros((3, 2)), np.array([0, 1, 0]))
    with pytest.raises(RuntimeError):
        classify.KnnClassifier(k=1).predict(np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------


def test_forest_separable_blobs():
    x, y = synth.gaussian_blobs([60, 60, 60], 5, 3.0, seed=7)
    train, test = classify.stratified_split(y, 0.25, seed=7)
    model = classify.RandomForest(n_trees=30, seed=7).fit(x[train], y[train])
    assert classify.accuracy(y[test], model.predict(x[test])) >= 0.95


def test_forest_deterministic_per_seed():
    x, y = synth.gaussian_blobs([40, 40], 5, 2.0, seed=1)
    probe = np.random.default_rng(9).normal(size=(30, 5))
    a = classify.RandomForest(n_trees=20, seed=4).fit(x, y).predict(probe)
    b = classify.RandomForest(n_trees=20, seed=4).fit(x, y).predict(probe)
    assert np.array_equal(a, b)


def test_forest_accuracy_survives_feature_permutation():
    x, y = synth.gaussian_blobs([40, 40, 40], 5, 6.0, seed=7)
    train, test = classify.stratified_split(y, 0.25, seed=7)
    model = classify.RandomForest(n_trees=25, seed=7).fit(x[train], y[train])
    assert classify.accuracy(y[test], model.predict(x[test])) == 1.0
    perm = np.random.default_rng(3).permutation(x.shape[1])
    permuted = classify.RandomForest(n_trees=25, seed=7).fit(x[train][:, perm], y[train])
    assert classify.accuracy(y[test], permuted.predict(x[test][:, perm])) == 1.0


def test_forest_persistence_round_trip(tmp_path):
    x, y = synth.gaussian_blobs([30, 30], 4, 2.5, seed=6)
    model = classify.RandomForest(n_trees=10, seed=6).fit(x, y)
    path = tmp_path / "forest.json"
    classify.save_model(path, model)
    loaded = classify.load_model(path)
    probe = np.random.default_rng(1).normal(size=(25, 4))
    assert np.array_equal(model.predict(probe), loaded.predict(probe))


def test_forest_validation():
    with pytest.raises(ValueError):
        classify.RandomForest(n_trees=0)
    with pytest.raises(RuntimeError):
        classify.RandomForest(n_trees=2).predict(np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# linear svm
# ---------------------------------------------------------------------------


def test_svm_separable_blobs_and_objective_history():
    x, y = synth.gaussian_blobs([40, 40], 3, 4.0, seed=0)
    train, test = classify.stratified_split(y, 0.25, seed=0)
    model = classify.LinearSvm(epochs=50).fit(x[train], y[train])
    assert classify.accuracy(y[test], model.predict(x[test])) == 1.0
    hist = model.objective_history
    # one entry for the zero-weight start plus one per epoch; at the start
    # every margin is zero so each of the two one-vs-rest problems
    # contributes a hinge of exactly 1
    assert len(hist) == 51
    assert hist[0] == 2.0
    assert np.all(np.isfinite(hist))
    assert min(hist) <= hist[-1] < hist[0]


def test_svm_balanced_weights_lift_minority_recall():
    x, y = synth.gaussian_blobs([120, 15], 4, 2.2, seed=3)
    train, test = classify.stratified_split(y, 0.3, seed=3)
    plain = classify.LinearSvm().fit(x[train], y[train])
    balanced = classify.LinearSvm(class_weight="balanced").fit(x[train], y[train])
    r_plain = classify.per_class_recall(y[test], plain.predict(x[test]), plain.classes_)
    r_bal = classify.per_class_recall(y[test], balanced.predict(x[test]), balanced.classes_)
    assert r_bal[1] == 1.0
    assert r_bal[1] > r_plain[1]


def test_svm_deterministic():
    x, y = synth.gaussian_blobs([25, 25], 3, 3.0, seed=4)
    a = classify.LinearSvm(epochs=30).fit(x, y)
    b = classify.LinearSvm(epochs=30).fit(x, y)
    assert np.array_equal(a._w, b._w)
    assert a.objective_history == b.objective_history


def test_svm_persistence_round_trip(tmp_path):
    x, y = synth.gaussian_blobs([20, 20, 20], 4, 3.0, seed=8)
    model = classify.LinearSvm(epochs=40).fit(x, y)
    path = tmp_path / "svm.json"
    classify.save_model(path, model)
    loaded = classify.load_model(path)
    probe = np.random.default_rng(2).normal(size=(30, 4))
    assert np.array_equal(model.predict(probe), loaded.predict(probe))


def test_svm_validation():
    with pytest.raises(ValueError):
        classify.LinearSvm(class_weight="auto")
    with pytest.raises(ValueError):
        classify.LinearSvm(lam=0.0)
    with pytest.raises(ValueError):
        classify.LinearSvm(lr=-1.0)
    with pytest.raises(ValueError):
        classify.LinearSvm(epochs=0)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def test_load_model_rejects_unknown_type(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"model": "mystery", "version": 1}))
    with pytest.raises(DataError):
        classify.load_model(path)


def test_load_model_rejects_bad_json(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        classify.load_model(path)
    with pytest.raises(DataError):
        classify.load_model(tmp_path / "absent.json")


def test_load_model_rejects_wrong_version(tmp_path):
    model = classify.KnnClassifier(k=1).fit(np.array([[0.0]]), np.array([0]))
    obj = model.to_json_dict()
    obj["version"] = 99
    path = tmp_path / "model.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(DataError):
        classify.load_model(path)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def test_metrics_frozen_case():
    y_true = np.array([0, 0, 1, 2, 2, 2])
    y_pred = np.array([0, 1, 1, 2, 2, 1])
    classes = np.array([0, 1, 2])
    assert classify.accuracy(y_true, y_pred) == pytest.approx(4 / 6)
    cm = classify.confusion_matrix(y_true, y_pred, classes)
    assert np.array_equal(cm, np.array([[1, 1, 0], [0, 1, 0], [0, 1, 2]]))
    recall = classify.per_class_recall(y_true, y_pred, classes)
    assert recall[0] == 0.5
    assert recall[1] == 1.0
    assert recall[2] == pytest.approx(2 / 3)


def test_recall_nan_for_absent_class():
    recall = classify.per_class_recall(
        np.array([0, 0]), np.array([0, 1]), np.array([0, 1])
    )
    assert recall[0] == 0.5
    assert np.isnan(recall[1])


def test_accuracy_validation():
    with pytest.raises(ValueError):
        classify.accuracy(np.array([0, 1]), np.array([0]))
    with pytest.raises(ValueError):
        classify.accuracy(np.array([]), np.array([]))
