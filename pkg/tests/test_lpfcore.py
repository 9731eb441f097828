import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdlpf.datagen import Dataset
from rdlpf.lpfcore import (LinearPFModel, RankDeficiencyError, VariableMap, dependent_columns, ls_objective,
                           predict, residuals, train_ls)


def vmap(nx, ny):
    return VariableMap(tuple((i + 2, "P") for i in range(nx)), tuple((i, "Pf") for i in range(ny)))


def data_1d(xs, ys):
    return Dataset(np.array(xs, float)[:, None], np.array(ys, float)[:, None], vmap(1, 1))


def test_exact_1d():
    assert train_ls(data_1d([1, 2, 3], [2, 4, 6])).A[0, 0] == pytest.approx(2.0, abs=1e-14)


def test_normal_equation_1d():
    assert train_ls(data_1d([1, 2, 3], [1, 3, 2])).A[0, 0] == pytest.approx(13 / 14, abs=1e-13)


def test_exact_recovery():
    rng = np.random.default_rng(0)
    nx, ny = 6, 4
    A = rng.normal(size=(ny, nx))
    X = rng.normal(size=(2 * nx, nx))
    model = train_ls(Dataset(X, X @ A.T, vmap(nx, ny)))
    assert np.max(np.abs(model.A - A)) <= 1e-8
    assert np.all(model.b == 0)


def test_predict_examples():
    m = LinearPFModel(np.eye(2), np.zeros(2), vmap(2, 2))
    assert np.allclose(predict(m, [0.3, -0.1]), [0.3, -0.1])
    m = LinearPFModel([[2, 0], [0, 3]], [1, -1], vmap(2, 2))
    assert np.allclose(predict(m, [1, 1]), [3, 2])
    with pytest.raises(ValueError):
        predict(m, [1, 2, 3])


def test_intercept_centroid(hist14):
    m = train_ls(hist14, intercept=True)
    assert np.allclose(predict(m, hist14.X.mean(axis=0)), hist14.Y.mean(axis=0), atol=1e-9)


def test_residual_locality_and_exactness():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 4))
    X = rng.normal(size=(10, 4))
    data = Dataset(X, X @ A.T, vmap(4, 3))
    m = LinearPFModel(A, np.zeros(3), data.map)
    R = residuals(m, data)
    assert R.shape == (3, 10) and np.allclose(R, 0, atol=1e-14)
    Y = data.Y.copy()
    Y[4, 1] += 0.01
    R2 = residuals(m, Dataset(X, Y, data.map))
    diff = R2 - R
    assert diff[1, 4] == pytest.approx(0.01, abs=1e-14)
    diff[1, 4] = 0
    assert np.all(diff == 0)


def test_ls_residuals_orthogonal(hist14):
    m = train_ls(hist14)
    R = residuals(m, hist14)
    # orthogonality holds in the identifiable directions; the ridge floor touches only the null space
    _, s, Vt = np.linalg.svd(hist14.X, full_matrices=False)
    keep = s > 1e-6 * s[0]
    proj = (hist14.X @ Vt[keep].T).T @ R.T
    assert np.max(np.abs(proj)) <= 1e-8


def test_ls_local_optimality(hist14):
    m = train_ls(hist14)
    base = ls_objective(m, hist14)
    rng = np.random.default_rng(3)
    for _ in range(5):
        dA = 1e-4 * rng.normal(size=m.A.shape)
        assert np.all(ls_objective(LinearPFModel(m.A + dA, m.b, m.map), hist14) >= base - 1e-15)


def test_collinear_columns_reported(hist14):
    dep = dependent_columns(hist14.X)
    assert len(dep) > 0
    # training still succeeds thanks to the ridge floor
    assert np.all(np.isfinite(train_ls(hist14).A))


def test_too_few_samples_rejected():
    with pytest.raises((RankDeficiencyError, ValueError)):
        train_ls(Dataset(np.ones((1, 3)), np.ones((1, 1)), vmap(3, 1)))


def test_model_json_roundtrip(hist14):
    m = train_ls(hist14)
    back = LinearPFModel.from_dict(__import__("json").loads(m.to_json()))
    assert np.array_equal(back.A, m.A) and back.map == m.map


@given(arrays(float, (3, 4), elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(-5, 5)),
       arrays(float, 4, elements=st.floats(-5, 5)), st.floats(-3, 3), st.floats(-3, 3))
def test_predict_linear(A, x1, x2, a, b):
    m = LinearPFModel(A, np.zeros(3), vmap(4, 3))
    lhs = predict(m, a * x1 + b * x2)
    rhs = a * predict(m, x1) + b * predict(m, x2)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))
