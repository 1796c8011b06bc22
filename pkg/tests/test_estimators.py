import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from sharpnorm.data import synth_blobs
from sharpnorm.estimators import SharpNetClassifier, SharpnessMeter


@pytest.fixture(scope="module")
def blobs():
    ds = synth_blobs(3, 30, 5, 0.3, 0)
    labels = np.array(["cat", "dog", "eel"])[ds.labels]
    return ds.features, labels


def test_params_and_clone():
    clf = SharpNetClassifier(hidden_layer_sizes=(7,), max_epochs=3)
    assert clf.get_params()["hidden_layer_sizes"] == (7,)
    twin = clone(clf)
    assert twin.get_params() == clf.get_params()
    twin.set_params(learning_rate=0.5)
    assert clf.learning_rate == 1e-3


def test_fit_predict_score(blobs):
    X, y = blobs
    clf = SharpNetClassifier(hidden_layer_sizes=(16,), max_epochs=40, batch_size=16, learning_rate=0.01).fit(X, y)
    assert set(clf.predict(X)) <= set(y)
    assert clf.score(X, y) > 0.9
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.n_features_in_ == 5


def test_same_random_state_same_weights(blobs):
    X, y = blobs
    a = SharpNetClassifier(hidden_layer_sizes=(6,), max_epochs=2, random_state=3).fit(X, y)
    b = SharpNetClassifier(hidden_layer_sizes=(6,), max_epochs=2, random_state=3).fit(X, y)
    assert a.params_.flat.tobytes() == b.params_.flat.tobytes()


def test_pipeline(blobs):
    X, y = blobs
    pipe = make_pipeline(StandardScaler(), SharpNetClassifier(hidden_layer_sizes=(8,), max_epochs=20, batch_size=16, learning_rate=0.01))
    assert pipe.fit(X, y).score(X, y) > 0.9


def test_unfitted_and_bad_input(blobs):
    X, y = blobs
    with pytest.raises(NotFittedError):
        SharpNetClassifier().predict(X)
    clf = SharpNetClassifier(hidden_layer_sizes=(4,), max_epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :3])
    with pytest.raises(ValueError):
        SharpNetClassifier().fit(X, np.zeros(len(X)))


def test_meter(blobs):
    X, y = blobs
    clf = SharpNetClassifier(hidden_layer_sizes=(6,), max_epochs=10, learning_rate=0.01).fit(X, y)
    meter = SharpnessMeter(clf, num_probes=10).fit(X, y)
    row = meter.transform()
    assert row.shape == (1, 4)
    assert row[0, 3] == meter.normalized_ >= 0
    exact = SharpnessMeter(clf, curvature="exact", loss="ce", fisher=False).fit(X, y)
    assert exact.report_.fisher_rao is None
    assert clone(meter).get_params()["num_probes"] == 10
    with pytest.raises(ValueError):
        SharpnessMeter(clf, curvature="magic").fit(X, y)
    with pytest.raises(ValueError):
        meter.fit(X, np.full(len(X), "yak"))
