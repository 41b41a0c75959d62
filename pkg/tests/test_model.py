import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedhybrid.errors import ContractError
from fedhybrid.model import (
    Dataset,
    RegressionModel,
    as_param_vector,
    gradient,
    loss,
    mean_target_bias_init,
    mse,
    param_count,
    predict,
    sgd_step,
)

from oracles import numeric_gradient

# rounded to 3 decimals so distinct values never square to an underflowed zero
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False).map(lambda x: round(x, 3))


def random_instance(seed, n=None, f=None, d=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 30))
    f = f or int(rng.integers(1, 6))
    d = d or int(rng.integers(1, 4))
    model = RegressionModel(rng.normal(size=param_count(f, d)), f, d)
    data = Dataset(rng.normal(size=(n, f)), rng.normal(size=(n, d)))
    return model, data


class TestPredict:
    def test_identity(self):
        m = RegressionModel.from_parts(np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(predict(m, [3.0, 5.0]), [3.0, 5.0])

    def test_constant(self):
        m = RegressionModel.from_parts(np.zeros((1, 3)), [1.5])
        np.testing.assert_array_equal(predict(m, [9.0, -2.0, 4.0]), [1.5])

    def test_affine(self):
        m = RegressionModel.from_parts([[2.0, 0.0], [0.0, 3.0]], [1.0, 1.0])
        np.testing.assert_array_equal(predict(m, [1.0, 1.0]), [3.0, 4.0])

    def test_batch_matches_rowwise(self):
        model, data = random_instance(3)
        batch = predict(model, data.inputs)
        rows = np.stack([predict(model, x) for x in data.inputs])
        np.testing.assert_allclose(batch, rows, rtol=0, atol=1e-12)

    def test_layout_row_major(self):
        # weights = vec(A) row-major, then b
        m = RegressionModel(np.arange(8.0), n_features=3, n_targets=2)
        np.testing.assert_array_equal(m.matrix, [[0, 1, 2], [3, 4, 5]])
        np.testing.assert_array_equal(m.bias, [6, 7])

    def test_wrong_feature_count(self):
        m = RegressionModel.zeros(3, 1)
        with pytest.raises(ContractError):
            predict(m, [1.0, 2.0])


class TestMse:
    def test_perfect_fit(self):
        y = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert mse(y, y) == 0.0

    def test_single_residual(self):
        assert mse([[0.0]], [[2.0]]) == 4.0

    def test_uniform_residuals(self):
        assert mse(np.ones((2, 2)), np.zeros((2, 2))) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            mse(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            mse(np.zeros((2, 2)), np.zeros((3, 2)))

    @given(
        arrays(np.float64, (7, 3), elements=finite),
        arrays(np.float64, (7, 3), elements=finite),
        st.permutations(range(7)),
    )
    def test_permutation_invariant_nonnegative(self, p, y, perm):
        perm = list(perm)
        a = mse(p, y)
        assert a >= 0
        assert mse(p[perm], y[perm]) == pytest.approx(a, rel=1e-12, abs=1e-12)
        assert (a == 0) == bool(np.array_equal(p, y))


class TestGradient:
    def test_exact_fit_is_stationary(self):
        rng = np.random.default_rng(0)
        model, _ = random_instance(1, f=4, d=2)
        x = rng.normal(size=(10, 4))
        data = Dataset(x, predict(model, x))
        np.testing.assert_allclose(gradient(model, data), 0.0, atol=1e-12)

    def test_scalar_hand_case(self):
        model = RegressionModel.zeros(1, 1)
        data = Dataset([[1.0]], [[2.0]])
        np.testing.assert_array_equal(gradient(model, data), [-4.0, -4.0])

    @pytest.mark.parametrize("seed", range(25))
    def test_finite_differences(self, seed):
        model, data = random_instance(1000 + seed)
        analytic = gradient(model, data)
        numeric = numeric_gradient(lambda w: loss(model.with_weights(w), data), model.weights)
        err = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert np.all((err < 1e-4) | (np.abs(analytic - numeric) < 1e-8))

    def test_shape(self):
        model, data = random_instance(5, f=3, d=2)
        assert gradient(model, data).shape == (param_count(3, 2),)


class TestSgdStep:
    def test_zero_gradient(self):
        w = np.array([1.0, -2.0])
        np.testing.assert_array_equal(sgd_step(w, np.zeros(2), 0.1), w)

    def test_arithmetic(self):
        np.testing.assert_allclose(sgd_step([1.0, 1.0], [10.0, -10.0], 0.1), [0.0, 2.0], atol=1e-15)

    def test_small_learning_rate(self):
        np.testing.assert_allclose(sgd_step([3.0, 4.0], [1e5, 0.0], 1e-5), [2.0, 4.0], atol=1e-12)

    def test_eta_must_be_positive(self):
        with pytest.raises(ContractError):
            sgd_step([1.0], [1.0], 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            sgd_step([1.0, 2.0], [1.0], 0.1)

    @given(
        arrays(np.float64, 5, elements=finite),
        arrays(np.float64, 5, elements=finite),
        arrays(np.float64, 5, elements=finite),
        st.floats(1e-6, 1.0),
    )
    def test_linearity(self, w, g1, g2, eta):
        once = sgd_step(w, g1 + g2, eta)
        twice = sgd_step(sgd_step(w, g1, eta), g2, eta)
        np.testing.assert_allclose(once, twice, rtol=0, atol=1e-12 * max(1.0, np.abs(w).max(), eta * 2e3))


class TestBiasInit:
    def test_mean(self):
        m = mean_target_bias_init(RegressionModel.zeros(2, 1), Dataset([[0, 0], [1, 1]], [[2.0], [4.0]]))
        np.testing.assert_array_equal(m.bias, [3.0])
        np.testing.assert_array_equal(m.matrix, 0.0)

    def test_constant_targets(self):
        t = np.array([1.5, -2.0])
        data = Dataset(np.random.default_rng(0).normal(size=(6, 3)), np.tile(t, (6, 1)))
        m = mean_target_bias_init(RegressionModel.zeros(3, 2), data)
        np.testing.assert_array_equal(m.bias, t)

    @pytest.mark.parametrize("seed", range(5))
    def test_training_mse_is_target_variance(self, seed):
        _, data = random_instance(seed, n=40, d=3)
        m = mean_target_bias_init(RegressionModel.zeros(data.n_features, 3), data)
        # brute-force population variance per target, then averaged
        var = []
        for j in range(3):
            col = [float(v) for v in data.targets[:, j]]
            mu = sum(col) / len(col)
            var.append(sum((c - mu) ** 2 for c in col) / len(col))
        assert loss(m, data) == pytest.approx(sum(var) / 3, abs=1e-10)


class TestContracts:
    def test_param_vector_rejects_nan(self):
        with pytest.raises(ContractError):
            as_param_vector([1.0, np.nan])

    def test_param_vector_dim(self):
        with pytest.raises(ContractError):
            as_param_vector([1.0, 2.0], dim=3)

    def test_model_dim(self):
        with pytest.raises(ContractError):
            RegressionModel(np.zeros(5), 2, 2)
        assert RegressionModel.zeros(4, 3).dim == 15

    def test_dataset_lengths(self):
        with pytest.raises(ContractError):
            Dataset(np.zeros((3, 2)), np.zeros((2, 1)))

    def test_dataset_finite(self):
        with pytest.raises(ContractError):
            Dataset([[np.inf]], [[0.0]])

    def test_empty_dataset(self):
        with pytest.raises(ContractError):
            Dataset(np.zeros((0, 2)), np.zeros((0, 1)))
