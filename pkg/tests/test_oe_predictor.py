from math import comb

import numpy as np
import pytest

from nnlpv.gradcheck import central_difference, random_instance, relative_error
from nnlpv.lpv_filter import DeltaContext, DimensionError, ModelOrders, count_inverse_filter_calls, delta_powers
from nnlpv.oe_predictor import Dataset, cost_gradient, predict, prediction_and_jacobian, residual_jacobian
from nnlpv.scheduling_net import SchedulingNet


def _time_stepping_oracle(a, b, y, ts):
    """Solve u(k) + sum_i b_i(k) delta^i u(k) = sum_i a_i(k) delta^i y(k) one sample at a time."""
    n = len(y)
    u = np.zeros(n)

    def delta(x, i, k):
        return sum(comb(i, j) * (-1) ** j * (x[k - j] if k - j >= 0 else 0.0) for j in range(i + 1)) / ts**i

    for k in range(n):
        rhs = sum(a[k, i] * delta(y, i, k) for i in range(a.shape[1]))
        # u(k) enters delta^i u(k) with weight ts^-i; move the known history to the right-hand side
        lead = 1.0 + sum(b[k, i - 1] / ts**i for i in range(1, b.shape[1] + 1))
        u[k] = 0.0
        history = sum(b[k, i - 1] * delta(u, i, k) for i in range(1, b.shape[1] + 1))
        u[k] = (rhs - history) / lead
    return u


def _small_case(seed, orders=ModelOrders(3, 3), n=40, ts=0.5):
    net = SchedulingNet.initialize([1, 4, orders.n_coefficients], "tanh", seed)
    rng = np.random.default_rng(seed)
    data = Dataset(rng.normal(size=n), rng.normal(size=n), rng.uniform(-1, 1, n), DeltaContext(ts))
    return net, data, orders


@pytest.mark.parametrize("seed", range(3))
def test_prediction_matches_time_stepping(seed):
    net, data, orders = _small_case(seed)
    values = net.evaluate(data.rho)
    oracle = _time_stepping_oracle(values[:, : orders.n_a], values[:, orders.n_a :], data.y, data.ctx.sample_time)
    u_hat = predict(net, data, orders).u_hat
    assert np.max(np.abs(u_hat - oracle)) <= 1e-10 * np.max(np.abs(oracle))


def test_zero_a_coefficients_predict_zero():
    net, data, orders = _small_case(0)
    last = len(net.weights) - 1
    weights = list(net.weights)
    biases = list(net.biases)
    weights[last] = weights[last].copy()
    weights[last][: orders.n_a] = 0.0
    biases[last] = np.zeros_like(biases[last])
    net = SchedulingNet(net.layer_sizes, tuple(weights), tuple(biases))
    pred = predict(net, data, orders)
    np.testing.assert_array_equal(pred.u_hat, 0.0)
    assert pred.cost == pytest.approx(float(data.u_meas @ data.u_meas), rel=1e-15)


def test_self_consistent_data_has_negligible_cost():
    net, data, orders = _small_case(1)
    clean = data.with_signals(u_meas=predict(net, data, orders).u_hat)
    assert predict(net, clean, orders).cost <= 1e-16 * float(clean.u_meas @ clean.u_meas)


class _Frozen:
    """Coefficient map whose outputs ignore its parameters."""

    n_params = 4

    def __init__(self, values):
        self.values = values

    @property
    def params(self):
        return np.zeros(self.n_params)

    def evaluate(self, rho):
        return self.values

    def jacobian(self, rho):
        return self.values, np.zeros(self.values.shape + (self.n_params,))


def test_frozen_coefficient_functions_give_zero_jacobian():
    net, data, orders = _small_case(2)
    jac = residual_jacobian(_Frozen(net.evaluate(data.rho)), data, orders)
    assert jac.shape == (len(data), 4)
    np.testing.assert_array_equal(jac, 0.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("hidden", [(), (3,), (3, 3)])
@pytest.mark.parametrize("n_a, n_b", [(3, 2), (2, 3)])
def test_residual_jacobian_matches_finite_differences(seed, hidden, n_a, n_b):
    orders = ModelOrders(n_a, n_b)
    net, data = random_instance(seed, 50, orders, hidden)
    _, jac = prediction_and_jacobian(net, data, orders)
    num = central_difference(lambda p: predict(net.with_params(p), data, orders).residuals, net.params)
    assert relative_error(jac, num) <= 1e-6


def test_single_b_coefficient_reduces_to_regressor_product():
    orders = ModelOrders(3, 1)
    net, data, _ = _small_case(3, orders)
    _, jac = prediction_and_jacobian(net, data, orders)
    _, full = net.jacobian(data.rho)
    closed = -np.einsum("ki,kip->kp", delta_powers(data.y, 3, data.ctx), full)
    np.testing.assert_allclose(jac, closed, rtol=1e-13, atol=1e-13 * np.max(np.abs(closed)))


def test_jacobian_uses_two_inverse_filterings():
    net, data, orders = _small_case(4)
    with count_inverse_filter_calls() as counter:
        prediction_and_jacobian(net, data, orders)
    assert counter.count == 2


def test_cost_gradient_examples():
    jac = np.eye(3)
    np.testing.assert_array_equal(cost_gradient(jac, np.zeros(3)), 0.0)
    np.testing.assert_array_equal(cost_gradient(jac, np.array([1.0, 0.0, 0.0])), [2.0, 0.0, 0.0])
    with pytest.raises(DimensionError):
        cost_gradient(jac, np.zeros(4))


def test_cost_gradient_matches_finite_differences_of_cost():
    orders = ModelOrders(3, 2)
    net, data = random_instance(7, 50, orders, (3, 3))
    pred, jac = prediction_and_jacobian(net, data, orders)
    grad = cost_gradient(jac, pred.residuals)
    num = central_difference(lambda p: predict(net.with_params(p), data, orders).cost, net.params)
    assert relative_error(grad, num) <= 1e-6


def test_dataset_validation():
    ctx = DeltaContext(1.0)
    with pytest.raises(DimensionError):
        Dataset(np.zeros(3), np.zeros(4), np.zeros(3), ctx)
    with pytest.raises(ValueError):
        Dataset(np.array([0.0, np.inf]), np.zeros(2), np.zeros(2), ctx)
    data = Dataset(np.zeros(3), np.zeros(3), np.zeros((3, 2)), ctx)
    assert data.rho.shape == (3, 2) and len(data) == 3
