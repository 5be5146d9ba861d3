import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tadquery.estimator import TemporalActionDetector

CONFIG = {
    "model": {"num_queries": 5, "enc_layers": 1, "dec_layers": 1, "hidden_dim": 16, "ffn_dim": 16,
              "points": 2, "heads": 2},
    "data": {"window": 32, "overlap": 24, "max_actions": 2},
    "train": {"batch_size": 2, "epochs": 2},
    "loss": {"negatives": 2},
}


def toy_problem():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3, 32, 6))
    y = [[(4, 12, 0)], [(10, 20, 1)], [(2, 8, 0), (20, 28, 1)]]
    for v, actions in zip(X, y):
        for s, e, c in actions:
            v[s:e + 1] += 3.0 * (c * 2 - 1)
    return X, y


def test_fit_predict_score():
    X, y = toy_problem()
    est = TemporalActionDetector(CONFIG, seed=0, max_steps=4).fit(X, y)
    assert est.n_features_in_ == 6 and est.n_classes_ == 2 and est.n_steps_ == 4
    preds = est.predict(X)
    assert len(preds) == 3
    assert all(r.start < r.end for per_video in preds for r in per_video)
    assert 0.0 <= est.score(X, y) <= 1.0


def test_params_round_trip():
    est = TemporalActionDetector(CONFIG, seed=3)
    assert est.get_params()["seed"] == 3
    assert clone(est).set_params(seed=4).seed == 4


def test_validation_errors():
    X, y = toy_problem()
    est = TemporalActionDetector(CONFIG)
    with pytest.raises(NotFittedError):
        est.predict(X)
    with pytest.raises(ValueError):
        est.fit(X, y[:2])
    with pytest.raises(ValueError):
        est.fit(X, [[(5, 40, 0)], [], []])
    bad = X.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        est.fit(bad, y)
