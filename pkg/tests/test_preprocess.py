import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcbr import preprocess as pp
from qcbr.errors import DegenerateInstance, InvalidArgument


def mixed_uniform(samples=5000, seed=0):
    rng = np.random.default_rng(seed)
    S = rng.uniform(-np.sqrt(3), np.sqrt(3), (samples, 2))
    A = np.array([[1.0, 0.6], [0.4, 1.0]])
    return S, S @ A.T


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_pca_components_orthonormal_and_sorted(seed, k):
    X = np.random.default_rng(seed).standard_normal((60, 5)) * np.array([5, 3, 2, 1, 0.5])
    model = pp.pca_fit(X, k)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(k), atol=1e-8)
    assert np.all(np.diff(model.explained_variance) <= 1e-12)


def test_pca_recovers_dominant_axis():
    rng = np.random.default_rng(1)
    X = np.column_stack([10 * rng.standard_normal(500), rng.standard_normal(500)])
    model = pp.pca_fit(X, 1)
    assert abs(model.components[0, 0]) == pytest.approx(1.0, abs=1e-3)
    assert model.explained_fraction[0] > 0.98


def test_rank_deficient_pca_warns_and_zero_pads():
    rng = np.random.default_rng(2)
    t = rng.standard_normal(50)
    X = np.column_stack([t, 2 * t, -t])
    with pytest.warns(RuntimeWarning):
        model = pp.pca_fit(X, 2)
    assert model.informative == 1 and model.rank_deficient
    Z = pp.pca_transform(model, X)
    np.testing.assert_array_equal(Z[:, 1], 0.0)


def test_fastica_recovers_mixed_uniform_sources():
    S, X = mixed_uniform()
    model = pp.ica_fit(X, 2, seed=0)
    assert model.all_converged
    Y = pp.ica_transform(model, X)
    C = np.abs(np.corrcoef(S.T, Y.T)[:2, 2:])
    assert np.all(C.max(axis=1) >= 0.95)
    np.testing.assert_allclose(np.cov(Y.T), np.eye(2), atol=1e-6)


def test_fastica_unmixing_is_orthonormal():
    _, X = mixed_uniform(2000, seed=3)
    W = pp.ica_fit(X, 2, seed=1).unmixing
    np.testing.assert_allclose(W @ W.T, np.eye(2), atol=1e-10)


def test_gaussian_input_does_not_raise():
    X = np.random.default_rng(0).standard_normal((400, 2))
    model = pp.ica_fit(X, 2, seed=0, max_iterations=50)
    assert model.num_components == 2


def test_whitening_rejects_rank_deficiency():
    t = np.random.default_rng(0).standard_normal(100)
    with pytest.raises(DegenerateInstance):
        pp.ica_fit(np.column_stack([t, t]), 2)


def test_sample_and_dimension_checks():
    with pytest.raises(InvalidArgument):
        pp.ica_fit(np.zeros((5, 2)), 2)
    with pytest.raises(InvalidArgument):
        pp.pca_fit(np.zeros((10, 3)), 4)
    with pytest.raises(InvalidArgument):
        pp.pca_fit([[np.nan, 1.0], [1.0, 2.0], [0.0, 0.0]], 1)


def test_preprocessor_round_trip_and_shape():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, (200, 8)) @ rng.standard_normal((8, 8))
    pre = pp.fit_preprocessor(X, 2, seed=0)
    Z = pre.transform(X)
    assert Z.shape == (200, 2)
    again = pp.preprocessor_from_dict(pp.preprocessor_to_dict(pre))
    np.testing.assert_array_equal(again.transform(X), Z)


def test_preprocessor_without_ica_is_plain_pca():
    X = np.random.default_rng(5).standard_normal((100, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pre = pp.fit_preprocessor(X, 2, use_ica=False)
    np.testing.assert_allclose(pre.transform(X), pp.pca_transform(pre.pca, X))
