from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from aklab.estimator import ConjugacyTransformer

X = np.random.default_rng(0).random((20, 2))


@pytest.fixture(scope="module")
def fitted():
    return ConjugacyTransformer(n_stages=1).fit(X)


def test_params_and_clone():
    est = ConjugacyTransformer(n_stages=3, sigma="1/3", map="f")
    params = est.get_params()
    assert params["n_stages"] == 3 and params["sigma"] == "1/3" and params["map"] == "f"
    c = clone(est)
    assert c.get_params() == params and c is not est
    est.set_params(n_stages=2)
    assert est.n_stages == 2


def test_round_trip(fitted):
    Y = fitted.transform(X)
    assert Y.shape == X.shape
    back = fitted.inverse_transform(Y)
    d = np.abs(back - X)
    d[:, 0] = np.minimum(d[:, 0], 1 - d[:, 0])
    assert np.max(d) < 1e-9


def test_jacobian_has_unit_determinant(fitted):
    J = fitted.jacobian(X[:5])
    np.testing.assert_allclose(np.linalg.det(J), 1.0, rtol=1e-5)


def test_metric_is_spd(fitted):
    G = fitted.metric(X[:5])
    np.testing.assert_allclose(G, np.swapaxes(G, 1, 2), rtol=1e-9)
    assert np.all(np.linalg.eigvalsh(G) > 0)


def test_f_map_moves_points():
    est = ConjugacyTransformer(n_stages=1, map="f").fit()
    assert not np.allclose(est.transform(X), X)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        ConjugacyTransformer().transform(X)


def test_wrong_width(fitted):
    with pytest.raises(ValueError):
        fitted.transform(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ConjugacyTransformer(dim_m=2).fit(np.zeros((2, 3)))


def test_stage_out_of_range():
    with pytest.raises(ValueError):
        ConjugacyTransformer(n_stages=1, stage=4).fit()
