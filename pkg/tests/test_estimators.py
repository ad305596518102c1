"""Estimator API tests: sklearn conventions, fit/predict round trips,
determinism, and input validation."""

import numpy as np
import pytest
from sklearn.base import clone

from pagnet import PagClassifier, PagSegmenter
from pagnet.shapes import generate_shapes


# Tiny, geometrically trivial two-class data: unit sphere shells vs. small
# blobs near the origin.  Scale alone separates them, so a small network
# learns within a few epochs.
def two_class_clouds(n_clouds, n_points=32, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(n_clouds):
        label = i % 2
        if label == 0:
            d = rng.normal(size=(n_points, 3))
            pts = d / np.linalg.norm(d, axis=1, keepdims=True)
        else:
            pts = rng.uniform(-0.15, 0.15, size=(n_points, 3))
        xs.append(pts.astype(np.float32))
        ys.append(label)
    return xs, np.asarray(ys)


def tiny_classifier(**overrides):
    kwargs = dict(encoder="[8, 1]; [8, 2]", k=4, subsample_rate=2,
                  proj_channels=16, fc_sizes=(16,), epochs=4, batch_size=4,
                  seed=0)
    kwargs.update(overrides)
    return PagClassifier(**kwargs)


def segmentation_data(n_clouds, n_points=48, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for _ in range(n_clouds):
        cloud = generate_shapes("two_part", n_points, rng=rng)
        xs.append(cloud.positions)
        ys.append(cloud.labels)
    return xs, ys


def tiny_segmenter(**overrides):
    kwargs = dict(encoder="[8, 1]; [8, 2]", k=4, subsample_rate=2,
                  global_fc_sizes=(16, 16), seg_head_hidden=8, epochs=2,
                  batch_size=4, seed=0)
    kwargs.update(overrides)
    return PagSegmenter(**kwargs)


def test_get_params_set_params_round_trip():
    est = tiny_classifier()
    params = est.get_params()
    assert params["k"] == 4
    assert params["encoder"] == "[8, 1]; [8, 2]"
    assert est.set_params(lr=0.01) is est
    assert est.get_params()["lr"] == 0.01


def test_sklearn_clone_preserves_params():
    est = tiny_classifier(lr=0.005, epochs=7)
    copy = clone(est)
    assert copy is not est
    assert copy.get_params() == est.get_params()


def test_fit_returns_self_and_sets_state():
    xs, ys = two_class_clouds(8)
    est = tiny_classifier(epochs=2)
    assert est.fit(xs, ys) is est
    assert est.n_classes_ == 2
    assert list(est.classes_) == [0, 1]
    assert est.model_.parameter_count() > 0
    assert 1 <= len(est.history_) <= 2
    assert est.history_[0].epoch == 0


def test_predict_shapes_and_range():
    xs, ys = two_class_clouds(8)
    est = tiny_classifier(epochs=2).fit(xs, ys)
    pred = est.predict(xs)
    assert pred.shape == (8,)
    assert pred.dtype == np.int64
    assert np.all((pred >= 0) & (pred < 2))


def test_predict_proba_rows_are_distributions():
    xs, ys = two_class_clouds(6)
    est = tiny_classifier(epochs=2).fit(xs, ys)
    proba = est.predict_proba(xs)
    assert proba.shape == (6, 2)
    assert np.all(proba >= 0)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    # predict agrees with argmax of probabilities
    np.testing.assert_array_equal(est.predict(xs), proba.argmax(axis=1))


def test_classifier_learns_easy_split():
    xs, ys = two_class_clouds(24)
    est = tiny_classifier(epochs=25, target_accuracy=1.0)
    est.fit(xs, ys)
    assert est.score(xs, ys) >= 0.9


def test_same_seed_same_fit():
    xs, ys = two_class_clouds(8)
    a = tiny_classifier(epochs=3).fit(xs, ys)
    b = tiny_classifier(epochs=3).fit(xs, ys)
    np.testing.assert_array_equal(a.predict_proba(xs), b.predict_proba(xs))


def test_label_gaps_size_the_output_layer():
    xs, _ = two_class_clouds(8)
    ys = np.asarray([0, 2] * 4)
    est = tiny_classifier(epochs=1).fit(xs, ys)
    assert est.n_classes_ == 3
    assert est.predict_proba(xs).shape == (8, 3)
    assert list(est.classes_) == [0, 2]


def test_classifier_input_validation():
    xs, ys = two_class_clouds(4)
    with pytest.raises(ValueError, match="labels"):
        tiny_classifier().fit(xs, ys[:-1])
    with pytest.raises(ValueError, match="at least one"):
        tiny_classifier().fit([], [])
    with pytest.raises(ValueError, match=">= 0"):
        tiny_classifier().fit(xs, [-1, 0, 1, 0])
    with pytest.raises(ValueError, match="two classes"):
        tiny_classifier().fit(xs, [0, 0, 0, 0])


def test_unfitted_classifier_raises():
    est = tiny_classifier()
    xs, ys = two_class_clouds(2)
    with pytest.raises(RuntimeError, match="not been fitted"):
        est.predict(xs)
    with pytest.raises(RuntimeError, match="not been fitted"):
        est.predict_proba(xs)


def test_segmenter_fit_predict_score():
    xs, ys = segmentation_data(6)
    est = tiny_segmenter().fit(xs, ys)
    assert est.n_parts_ == 2
    preds = est.predict(xs)
    assert len(preds) == len(xs)
    for pred, x in zip(preds, xs):
        assert pred.shape == (len(x),)
        assert np.all((pred >= 0) & (pred < 2))
    assert 0.0 <= est.score(xs, ys) <= 1.0


def test_segmenter_clone_and_determinism():
    xs, ys = segmentation_data(4)
    est = tiny_segmenter()
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    a = est.fit(xs, ys).predict(xs)
    b = copy.fit(xs, ys).predict(xs)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa, pb)


def test_segmenter_input_validation():
    xs, ys = segmentation_data(4)
    with pytest.raises(ValueError, match="label arrays"):
        tiny_segmenter().fit(xs, ys[:-1])
    with pytest.raises(ValueError, match="at least one"):
        tiny_segmenter().fit([], [])


def test_unfitted_segmenter_raises():
    xs, ys = segmentation_data(2)
    with pytest.raises(RuntimeError, match="not been fitted"):
        tiny_segmenter().predict(xs)
    with pytest.raises(RuntimeError, match="not been fitted"):
        tiny_segmenter().score(xs, ys)


def test_aux_losses_toggle_changes_param_set():
    xs, ys = segmentation_data(4)
    with_aux = tiny_segmenter(epochs=1).fit(xs, ys)
    without = tiny_segmenter(epochs=1, use_aux_losses=False).fit(xs, ys)
    names_with = set(with_aux.model_.named_parameters())
    names_without = set(without.model_.named_parameters())
    assert any(n.startswith("ds.") for n in names_with)
    assert not any(n.startswith("ds.") for n in names_without)
