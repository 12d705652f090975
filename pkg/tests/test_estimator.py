import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pipegat.estimator import GATNodeClassifier


def semi_supervised(ds):
    y = np.full(ds.n, -1)
    y[ds.train_mask] = ds.labels[ds.train_mask]
    return y


def test_params_round_trip():
    clf = GATNodeClassifier(epochs=5, heads=2, chunks=2, mode="pipeline")
    params = clf.get_params()
    assert params["heads"] == 2 and params["chunks"] == 2
    assert clone(clf).get_params() == params
    assert clf.set_params(lr=0.01).lr == 0.01


def test_fit_predict_score(planted):
    clf = GATNodeClassifier(epochs=40, hidden=4, heads=2, out_heads=1, random_state=0)
    clf.fit(planted.features, semi_supervised(planted), graph=planted.graph)
    assert len(clf.loss_curve_) == 40
    assert clf.loss_curve_[-1] < clf.loss_curve_[0]
    proba = clf.predict_proba(planted.features)
    assert proba.shape == (planted.n, 3)
    assert np.allclose(proba.sum(axis=1), 1.0)
    pred = clf.predict(planted.features)
    assert set(pred) <= set(clf.classes_)
    y_test = np.where(planted.test_mask, planted.labels, -1)
    assert clf.score(planted.features, y_test) > 0.5


def test_string_labels_are_kept(planted):
    names = np.array(["a", "b", "c"])
    y = np.where(planted.train_mask, names[planted.labels], None)
    y = np.array([-1 if v is None else v for v in y], dtype=object)
    clf = GATNodeClassifier(epochs=2, hidden=2, heads=1, out_heads=1).fit(planted.features, y, graph=planted.graph)
    assert list(clf.classes_) == ["a", "b", "c"]
    assert clf.predict(planted.features).dtype == object


def test_pipeline_mode_matches_single_for_one_chunk(planted):
    y = semi_supervised(planted)
    kw = dict(epochs=6, hidden=4, heads=2, out_heads=2, random_state=3)
    a = GATNodeClassifier(**kw).fit(planted.features, y, graph=planted.graph)
    b = GATNodeClassifier(mode="pipeline", chunks=1, **kw).fit(planted.features, y, graph=planted.graph)
    assert np.allclose(a.loss_curve_, b.loss_curve_, rtol=1e-12)


def test_validation(planted):
    clf = GATNodeClassifier(epochs=1)
    with pytest.raises(NotFittedError):
        clf.predict(planted.features)
    with pytest.raises(ValueError, match="graph"):
        clf.fit(planted.features[:10], np.zeros(10), graph=planted.graph)
    with pytest.raises(ValueError, match="labeled"):
        clf.fit(planted.features, np.full(planted.n, -1), graph=planted.graph)
    clf.fit(planted.features, semi_supervised(planted), graph=planted.graph)
    with pytest.raises(ValueError, match="shape"):
        clf.predict(planted.features[:, :3])
