import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fedccfa import FederatedDriftClassifier
from fedccfa.data import make_synthetic


def data(seed=0, classes=3, per_class=30):
    ds = make_synthetic(classes, 6, per_class, 6.0, 0.5, seed)
    return ds.inputs, ds.labels


def small(**kw):
    params = dict(n_clients=3, rounds=4, hidden_dim=8, local_epochs=1, random_state=0)
    params.update(kw)
    return FederatedDriftClassifier(**params)


def test_get_set_params_and_clone():
    est = small(eps=0.2)
    params = est.get_params()
    assert params["eps"] == 0.2 and params["rounds"] == 4
    assert est.set_params(gamma=50.0).gamma == 50.0
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    assert copy is not est


def test_fit_predict_transform():
    X, y = data()
    est = small().fit(X, y)
    assert est.transform(X).shape == (len(X), 8)
    assert np.all(est.transform(X) >= 0)
    pred = est.predict(X)
    assert pred.shape == y.shape and set(pred) <= set(est.classes_)
    assert est.predict_clients(X).shape == (3, len(X))
    assert len(est.history_) == 4 and len(est.partition_) == 3
    assert est.score(X, y) > 0.5


def test_string_labels_are_mapped_back():
    X, y = data()
    names = np.array(["a", "b", "c"])[y]
    est = small().fit(X, names)
    assert set(est.predict(X)) <= {"a", "b", "c"}


def test_fit_is_deterministic():
    X, y = data()
    a = small().fit(X, y).history_
    b = small().fit(X, y).history_
    assert [m.mean_acc for m in a] == [m.mean_acc for m in b]


def test_explicit_partition():
    X, y = data()
    partition = [np.arange(0, 90, 2), np.arange(1, 90, 2)]
    est = small(partition=partition).fit(X, y)
    assert len(est.clients_) == 2
    np.testing.assert_array_equal(est.partition_[1], np.arange(1, 90, 2))


def test_validation():
    X, y = data()
    with pytest.raises(NotFittedError):
        small().predict(X)
    with pytest.raises(ValueError):
        small().fit(X[:, :, None], y)
    with pytest.raises(ValueError):
        small().fit(X, y[:-1])
    X_bad = X.copy()
    X_bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        small().fit(X_bad, y)
    est = small().fit(X, y)
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        small().fit(X, y, X, np.full_like(y, 7))
