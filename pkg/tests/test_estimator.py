import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nnuzoo.data import SynthSpec, generate_synthetic
from nnuzoo.estimator import SegmentationEstimator
from nnuzoo.validation import check_geometry, check_images, check_labels


def arrays(count=12, canvas=(64, 64), seed=0):
    ds = generate_synthetic(SynthSpec(canvas=canvas, num_classes=3), count, seed)
    X = np.stack([ds[i].image for i in range(count)])
    y = np.stack([ds[i].label for i in range(count)])
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = arrays()
    est = SegmentationEstimator("U2NetS", epochs=3, batch_size=4, augment=False, seed=1)
    return est.fit(X, y), X, y


def test_fit_predict_shapes(fitted):
    est, X, y = fitted
    proba = est.predict_proba(X)
    assert proba.shape == (len(X), 3, 64, 64)
    np.testing.assert_allclose(proba.sum(1), 1.0, atol=1e-5)
    assert est.predict(X).shape == y.shape
    assert list(est.classes_) == [0, 1, 2]
    assert len(est.history_) == 3


def test_score_range(fitted):
    est, X, y = fitted
    assert 0.0 <= est.score(X, y) <= 1.0


def test_channel_axis_optional(fitted):
    est, X, _ = fitted
    np.testing.assert_array_equal(est.predict(X[:, 0]), est.predict(X))


def test_fit_is_deterministic():
    X, y = arrays(count=6)
    kw = dict(epochs=1, batch_size=3, augment=False, seed=4)
    a = SegmentationEstimator(**kw).fit(X, y).predict_proba(X)
    b = SegmentationEstimator(**kw).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(a, b)


def test_get_params_and_clone():
    est = SegmentationEstimator("SS2D2NetS", epochs=5, lr=1e-3)
    params = est.get_params()
    assert params["arch"] == "SS2D2NetS" and params["epochs"] == 5 and params["lr"] == 1e-3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=7)
    assert est.epochs == 7


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        SegmentationEstimator().predict(np.zeros((1, 1, 32, 32)))


def test_predict_rejects_other_geometry(fitted):
    est, _, _ = fitted
    with pytest.raises(ValueError, match="expected images"):
        est.predict(np.zeros((1, 1, 32, 64), np.float32))


def test_fit_rejects_indivisible_size():
    X, y = arrays(count=2)
    with pytest.raises(ValueError, match="divisible"):
        SegmentationEstimator(epochs=1).fit(X[:, :, :60, :60], y[:, :60, :60])


@pytest.mark.parametrize("X", [np.zeros((2, 8)), np.zeros((0, 1, 8, 8)), np.full((1, 1, 8, 8), np.nan)])
def test_check_images_rejects(X):
    with pytest.raises(ValueError):
        check_images(X)


def test_check_images_adds_channel():
    assert check_images(np.zeros((2, 8, 8))).shape == (2, 1, 8, 8)


@pytest.mark.parametrize("y, k", [
    (np.zeros((2, 8, 7), int), None),
    (np.full((2, 8, 8), -1), None),
    (np.full((2, 8, 8), 3), 3),
    (np.full((2, 8, 8), 0.5), None),
])
def test_check_labels_rejects(y, k):
    with pytest.raises(ValueError):
        check_labels(y, np.zeros((2, 1, 8, 8)), k)


def test_check_labels_allows_ignore_index():
    from nnuzoo.data import IGNORE_INDEX

    y = np.full((1, 4, 4), IGNORE_INDEX)
    y[0, 0, 0] = 1
    assert check_labels(y, np.zeros((1, 1, 4, 4)), 2).dtype == np.int64


def test_check_geometry():
    check_geometry(np.zeros((1, 1, 32, 64)), (32, 32), min_cells=2)
    with pytest.raises(ValueError):
        check_geometry(np.zeros((1, 1, 32, 48)), (32, 32))
    with pytest.raises(ValueError, match="coarsest"):
        check_geometry(np.zeros((1, 1, 32, 32)), (32, 32), min_cells=2)


def test_fit_rejects_single_pixel_bottleneck():
    X, y = arrays(count=2)
    with pytest.raises(ValueError, match="coarsest"):
        SegmentationEstimator(epochs=1).fit(X[:, :, :32, :32], y[:, :32, :32])
