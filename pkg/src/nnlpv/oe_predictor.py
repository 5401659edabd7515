"""One-step-ahead output-error predictor of the plant input and its Jacobian.

The model is the inverse (feedforward) filter ``B(delta, rho) u = A(delta, rho) y``
and the predictor is ``u_hat = B^-1 A y``. Residuals are ``eps = u_meas - u_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lpv_filter import (
    CoefficientTrajectories,
    DeltaContext,
    DimensionError,
    ModelOrders,
    apply_a_polynomial,
    delta_powers,
    inverse_monic_filter,
)
from .scheduling_net import linearize

# Sign of d eps / d phi relative to d u_hat / d phi. Flipped only by mutation tests.
_JACOBIAN_SIGN = -1.0


@dataclass(frozen=True)
class Dataset:
    """Aligned signals ``u_meas``, ``y`` (length N) and scheduling ``rho`` of shape ``(N, N_rho)``."""

    u_meas: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    ctx: DeltaContext

    def __post_init__(self):
        u = np.asarray(self.u_meas, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 1:
            rho = rho[:, None]
        if not (len(u) == len(y) == rho.shape[0]):
            raise DimensionError(f"signal lengths differ: u={len(u)}, y={len(y)}, rho={rho.shape[0]}")
        for name, arr in (("u_meas", u), ("y", y), ("rho", rho)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "u_meas", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "rho", rho)

    def __len__(self) -> int:
        return len(self.y)

    def with_signals(self, u_meas=None, y=None) -> "Dataset":
        return Dataset(
            self.u_meas if u_meas is None else u_meas,
            self.y if y is None else y,
            self.rho,
            self.ctx,
        )


@dataclass(frozen=True)
class PredictionResult:
    u_hat: np.ndarray
    residuals: np.ndarray
    cost: float


def predict_from_trajectories(traj: CoefficientTrajectories, data: Dataset) -> PredictionResult:
    # an unstable trajectory may overflow; the resulting infinite cost is for the caller to reject
    with np.errstate(over="ignore", invalid="ignore"):
        u_hat = inverse_monic_filter(apply_a_polynomial(data.y, traj, data.ctx), traj, data.ctx)
        eps = data.u_meas - u_hat
        return PredictionResult(u_hat, eps, float(eps @ eps))


def predict(coefffn, data: Dataset, orders: ModelOrders) -> PredictionResult:
    """Predict ``u`` from ``y`` with the coefficient functions evaluated along ``rho``."""
    values = coefffn.evaluate(data.rho)
    traj = CoefficientTrajectories.from_stacked(values, orders)
    return predict_from_trajectories(traj, data)


def regressors(y, u_hat, orders: ModelOrders, ctx: DeltaContext) -> np.ndarray:
    """Per-step signals multiplying each coefficient in ``d u_hat``.

    Columns are ``delta^i y`` for i < n_a followed by ``-delta^i u_hat`` for
    1 <= i < n_b, matching the coefficient ordering of the map output.
    """
    cols = [delta_powers(y, orders.n_a, ctx)]
    if orders.n_b > 1:
        cols.append(-delta_powers(u_hat, orders.n_b, ctx)[:, 1:])
    return np.hstack(cols)


def prediction_and_jacobian(coefffn, data: Dataset, orders: ModelOrders):
    """Predictor output together with the residual Jacobian ``J[k, j] = d eps(k) / d phi_j``.

    Differentiating ``B u_hat = A y`` gives
    ``d u_hat = B^-1 (sum_i da_i delta^i y - sum_i db_i delta^i u_hat)``:
    one inverse filtering produces ``u_hat`` and a second one, applied to all
    parameter columns at once, produces the Jacobian.
    """
    values, pullback = linearize(coefffn, data.rho)
    traj = CoefficientTrajectories.from_stacked(values, orders)
    pred = predict_from_trajectories(traj, data)
    columns = pullback(regressors(data.y, pred.u_hat, orders, data.ctx))
    jac = _JACOBIAN_SIGN * inverse_monic_filter(columns, traj, data.ctx)
    return pred, jac


def residual_jacobian(coefffn, data: Dataset, orders: ModelOrders) -> np.ndarray:
    """Time-major ``(N, n_params)`` Jacobian of the residuals."""
    return prediction_and_jacobian(coefffn, data, orders)[1]


def cost_gradient(jac: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Gradient of ``V = sum eps^2``: ``2 J^T eps``."""
    jac = np.asarray(jac, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    if jac.shape[0] != residuals.shape[0]:
        raise DimensionError(f"Jacobian rows {jac.shape[0]} != residual length {residuals.shape[0]}")
    return 2.0 * jac.T @ residuals
