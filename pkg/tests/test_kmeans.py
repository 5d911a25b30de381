import numpy as np
import pytest

from abimca.errors import ConfigurationError, InvalidArgumentError
from abimca.kmeans import KMeansModel, _reseed_empty, fit, fit_predict, inertia, predict, window_features
from abimca.options import KMeansConfig
from abimca.series import LabelArray, TimeSeries


@pytest.fixture
def blobs():
    rng = np.random.default_rng(3)
    centers = np.array([[0.0, 0.0], [10.0, 0.0]])
    truth = np.repeat([0, 1, 0, 1], 25)
    values = centers[truth] + rng.normal(0.0, 0.1, size=(truth.size, 2))
    return TimeSeries(values.T), truth


def test_window_features(small_series):
    features = window_features(small_series, 4)
    assert features.shape == (117, 12)
    np.testing.assert_array_equal(features[5], small_series.values[:, 5:9].T.ravel())
    np.testing.assert_array_equal(window_features(small_series, 1), small_series.values.T)

    with pytest.raises(InvalidArgumentError):
        window_features(small_series, 0)
    with pytest.raises(InvalidArgumentError):
        window_features(small_series, 121)


def test_fit_predict_blobs(blobs):
    series, truth = blobs
    config = KMeansConfig(n_clusters=2, batch_size=16, max_iter=20, seed=1)
    model = fit(series, config)
    labels = predict(series, model)
    assert len(labels) == series.n
    assert set(labels.ids) == {1, 2}
    # a one-to-one mapping between true and found clusters
    pairs = set(zip(truth.tolist(), labels.tolist()))
    assert len(pairs) == 2
    assert len({found for _, found in pairs}) == 2

    assert fit_predict(series, config) == labels
    assert inertia(series, labels, model) < series.n * 0.5


def test_fit_windows(blobs):
    series, _ = blobs
    model = fit(series, KMeansConfig(n_clusters=2, seq_len=5, max_iter=5))
    assert model.centroids.shape == (2, 10)
    labels = predict(series, model)
    assert len(labels) == series.n
    assert labels.labels[0] == labels.labels[4]


def test_reseed_empty():
    samples = np.array([[0.0], [1.0], [9.0], [10.0]])
    model = KMeansModel(centroids=np.array([[5.0], [100.0]]), counts=np.array([4, 0]))
    assignment = model.assign(samples)
    assert assignment.tolist() == [0, 0, 0, 0]
    _reseed_empty(model, samples, assignment)
    # the empty centroid takes the sample farthest from the largest cluster's centroid
    assert model.centroids[1, 0] == 0.0
    assert assignment.tolist() == [1, 0, 0, 0]


def test_fit_invalid(small_series):
    with pytest.raises(InvalidArgumentError):
        fit(small_series, KMeansConfig(n_clusters=200))
    with pytest.raises(ConfigurationError):
        fit(small_series, KMeansConfig(n_clusters=0))


def test_inertia_invalid(small_series):
    model = fit(small_series, KMeansConfig(n_clusters=2, max_iter=2))
    with pytest.raises(InvalidArgumentError):
        inertia(small_series, LabelArray([1, 2]), model)
    with pytest.raises(InvalidArgumentError):
        inertia(small_series, LabelArray(np.full(small_series.n, 3)), model)


def test_single_cluster(blobs):
    series, _ = blobs
    assert set(fit_predict(series, KMeansConfig(n_clusters=1, max_iter=3)).tolist()) == {1}


def test_centroids_in_hull(blobs):
    series, _ = blobs
    model = fit(series, KMeansConfig(n_clusters=2, batch_size=7, max_iter=3, seed=4))
    assert (model.centroids.min(axis=0) >= series.values.min(axis=1)).all()
    assert (model.centroids.max(axis=0) <= series.values.max(axis=1)).all()


def test_inertia_exact():
    series = TimeSeries([[0.0, 2.0]])
    model = KMeansModel(centroids=np.array([[0.0]]), counts=np.array([2]))
    assert inertia(series, LabelArray([1, 1]), model) == 4.0
