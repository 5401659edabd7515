"""Finite-difference verification of the analytic derivatives on small random instances.

Errors are normwise: ``max |analytic - numeric| / max |numeric|`` over all
entries of the compared array, with central differences of step ``h``
scaled by ``max(1, |x|)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lpv_filter import DeltaContext, ModelOrders, delta_powers
from .oe_predictor import Dataset, predict, prediction_and_jacobian
from .scheduling_net import (
    SchedulingNet,
    _activate,
    layer_sensitivities,
    net_forward,
    param_jacobian,
    unflatten,
)


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), np.finfo(float).tiny)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def central_difference(fun, x, h: float = 1e-6) -> np.ndarray:
    """Jacobian of ``fun`` at ``x`` with the input axis last."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * step))
    return np.stack(cols, axis=-1)


def _output_from_layer(net: SchedulingNet, l: int, z: np.ndarray) -> np.ndarray:
    """Network output when the pre-activation of hidden layer ``l`` is forced to ``z``."""
    h = _activate(z, net.activation)
    for k in range(l, net.n_hidden):
        h = _activate(net.weights[k] @ h + net.biases[k], net.activation)
    return net.weights[-1] @ h + net.biases[-1]


def random_instance(seed: int, n_samples=50, orders=ModelOrders(3, 2), hidden=(3, 3), sample_time=1.0):
    """Random net, data and scheduling with a well-conditioned inverse filter.

    The output rows feeding the b-coefficients are shrunk so that
    ``|b_1| < 0.5`` and the recursion stays stable at ``sample_time = 1``.
    """
    rng = np.random.default_rng(seed)
    net = SchedulingNet.initialize([1, *hidden, orders.n_coefficients], "tanh", seed)
    weights = [w.copy() for w in net.weights]
    biases = [rng.uniform(-0.5, 0.5, c.shape) for c in net.biases]
    weights[-1][orders.n_a :] *= 0.25 / max(1.0, np.sqrt(hidden[-1] if hidden else 1))
    biases[-1][orders.n_a :] *= 0.1
    net = SchedulingNet(net.layer_sizes, tuple(weights), tuple(biases), "tanh")
    data = Dataset(
        rng.normal(size=n_samples),
        rng.normal(size=n_samples),
        rng.uniform(-1, 1, n_samples),
        DeltaContext(sample_time),
    )
    return net, data


@dataclass
class GradcheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def lines(self) -> list:
        out = [f"{name:<26s} max rel err {err:.3e}  {'PASS' if err <= self.tolerance else 'FAIL'}"
               for name, err in self.errors.items()]
        out.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return out


def run_gradcheck(
    n_samples=50, n_a=3, n_b=2, hidden=(3, 3), seeds=5, sample_time=1.0, fd_step=1e-6, tolerance=1e-6
) -> GradcheckReport:
    """Worst error over ``seeds`` random instances for every derivative path."""
    orders = ModelOrders(n_a, n_b)
    worst = {"layer_sensitivities": 0.0, "param_jacobian": 0.0, "residual_jacobian": 0.0, "closed_form_nb1": 0.0}
    for seed in range(seeds):
        net, data = random_instance(seed, n_samples, orders, tuple(hidden), sample_time)
        x = data.rho[: min(5, n_samples)]

        _, cache = net_forward(net, x)
        sens = layer_sensitivities(net, cache)
        for l in range(1, net.n_hidden + 1):
            for b in range(x.shape[0]):
                num = central_difference(lambda z: _output_from_layer(net, l, z), cache.z[l][b], fd_step)
                worst["layer_sensitivities"] = max(worst["layer_sensitivities"], relative_error(sens.deltas[l][b], num))

        jac = param_jacobian(net, sens)
        phi = net.params
        num = central_difference(lambda p: unflatten(p, net.layer_sizes).evaluate(x), phi, fd_step)
        worst["param_jacobian"] = max(worst["param_jacobian"], relative_error(jac, num))

        _, rjac = prediction_and_jacobian(net, data, orders)
        num = central_difference(lambda p: predict(net.with_params(p), data, orders).residuals, phi, fd_step)
        worst["residual_jacobian"] = max(worst["residual_jacobian"], relative_error(rjac, num))

        # n_b = 1: no inverse filtering, u_hat = A y and d eps = -sum_i da_i delta^i y
        orders1 = ModelOrders(n_a, 1)
        net1 = SchedulingNet.initialize([1, *hidden, n_a], "tanh", seed)
        _, rjac1 = prediction_and_jacobian(net1, data, orders1)
        _, full = net1.jacobian(data.rho)
        closed = -np.einsum("ki,kip->kp", delta_powers(data.y, n_a, data.ctx), full)
        worst["closed_form_nb1"] = max(worst["closed_form_nb1"], relative_error(rjac1, closed))
    return GradcheckReport(tolerance, worst)
