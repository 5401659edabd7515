"""Parameter estimation for the inverse LPV model.

* :func:`lm_optimize` -- Levenberg-Marquardt on the output-error cost using the
  analytic residual Jacobian.
* :func:`gradient_descent_optimize` -- first-order baseline on the same cost.
* :func:`sk_optimize` -- Sanathanan-Koerner iterations: the inverse filter is
  frozen at the previous iterate and the resulting weighted equation-error
  problem is solved with LM.
* :func:`arx_warm_start` -- equation-error fit on smoothed data, used to
  initialize the output-error stage.

The solvers :func:`levenberg_marquardt` and :func:`gradient_descent` work on a
generic ``evaluate(phi, jacobian) -> (residuals, J or None)`` callback.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg, signal

from .lpv_filter import (
    CoefficientTrajectories,
    DeltaContext,
    ModelOrders,
    SingularFilterError,
    delta_powers,
    generalized_inverse_filter,
)
from .oe_predictor import Dataset, predict, prediction_and_jacobian
from .scheduling_net import linearize

log = logging.getLogger(__name__)

TERMINATIONS = ("param_tol", "max_iters", "singular_filter", "stalled")

Evaluator = Callable[[np.ndarray, bool], tuple]


@dataclass(frozen=True)
class LmConfig:
    lambda_init: float = 1e-2
    mu: float = 10.0
    param_tol: float = 1e-8
    max_iters: int = 500
    max_inner_rejections: int = 25
    solver: str = "svd"

    def __post_init__(self):
        if self.solver not in ("svd", "cholesky"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if not self.mu > 1:
            raise ValueError(f"mu must be > 1, got {self.mu}")
        for name in ("lambda_init", "param_tol", "max_iters", "max_inner_rejections"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class OptimizerReport:
    """Outcome of one optimization run.

    ``cost_history[0]`` is the initial cost, followed by the cost after every
    accepted step. ``lambda_history`` lists the damping (or step size) after
    every update of it, in order.
    """

    cost_history: list
    lambda_history: list
    termination: str
    final_params: np.ndarray
    iterations: int
    inner_rejections_total: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def accepted_steps(self) -> int:
        return max(len(self.cost_history) - 1, 0)

    def iterations_to(self, threshold: float) -> float:
        """Accepted steps needed until the cost first drops to ``threshold`` (inf if never)."""
        for i, c in enumerate(self.cost_history):
            if c <= threshold:
                return i
        return float("inf")

    def to_dict(self) -> dict:
        """JSON-compatible form; non-finite numbers become ``None``."""
        return jsonable(asdict(self))


def jsonable(obj):
    """Recursively convert numpy containers and scalars; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _sum_squares(eps) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        c = float(np.dot(eps, eps))
    return c if np.isfinite(c) else float("inf")


class _CholeskyStep:
    """Damped step from a Cholesky factorization of ``J^T J + lam I``."""

    def __init__(self, jac, eps):
        self.jtj = jac.T @ jac
        self.jte = jac.T @ eps

    def __call__(self, lam):
        h = self.jtj + lam * np.eye(self.jtj.shape[0])
        try:
            factor = linalg.cho_factor(h, check_finite=False)
        except linalg.LinAlgError:
            return None
        step = -linalg.cho_solve(factor, self.jte, check_finite=False)
        return step if np.all(np.isfinite(step)) else None


class _SvdStep:
    """Same step via ``J = U S V^T``: ``-V diag(s / (s^2 + lam)) U^T eps``.

    Avoids squaring the condition number of ``J``; one decomposition serves
    every damping value tried within an iteration. ``J`` is first reduced by
    a thin QR so the SVD acts on a square ``n_params`` matrix.
    """

    def __init__(self, jac, eps):
        n = jac.shape[1]
        if jac.shape[0] > n:
            # R-factor of [J, eps]: its last column holds Q^T eps
            raug = linalg.qr(np.column_stack([jac, eps]), mode="r", check_finite=False)[0]
            r, qte = raug[:n, :n], raug[:n, n]
        else:
            r, qte = jac, eps
        u, self.s, self.vt = linalg.svd(r, full_matrices=False, check_finite=False, lapack_driver="gesdd")
        self.ute = u.T @ qte

    def __call__(self, lam):
        step = -self.vt.T @ (self.s / (self.s**2 + lam) * self.ute)
        return step if np.all(np.isfinite(step)) else None


def damped_step(jac, eps, lam, solver="svd"):
    """Solve ``(J^T J + lam I) step = -J^T eps``; ``None`` if the solve fails."""
    return (_SvdStep if solver == "svd" else _CholeskyStep)(jac, eps)(lam)


def _try_evaluate(evaluate, phi, jacobian):
    try:
        eps, jac = evaluate(phi, jacobian)
    except (SingularFilterError, FloatingPointError, OverflowError):
        return None, None, float("inf")
    return eps, jac, _sum_squares(eps)


def levenberg_marquardt(evaluate: Evaluator, phi0, cfg: LmConfig = LmConfig()):
    """Minimize ``sum eps(phi)^2`` with an adaptively damped Gauss-Newton step.

    An accepted step (strict cost decrease) divides the damping by ``mu`` and
    starts a new iteration with a fresh Jacobian; a rejected step multiplies it
    by ``mu`` and retries with the same Jacobian. A non-finite trial cost or a
    failed factorization counts as a rejection.

    Returns
    -------
    phi : ndarray
    report : OptimizerReport
    """
    phi = np.array(phi0, dtype=float)
    eps, jac, cost = _try_evaluate(evaluate, phi, True)
    if eps is None or not np.isfinite(cost) or not np.all(np.isfinite(jac)):
        return phi, OptimizerReport([], [], "singular_filter", phi, 0)

    lam = cfg.lambda_init
    costs, lambdas = [cost], []
    rejected_total = 0
    termination = "max_iters"
    q = 0
    while q < cfg.max_iters:
        q += 1
        solve = (_SvdStep if cfg.solver == "svd" else _CholeskyStep)(jac, eps)
        rejections = 0
        accepted = None
        while accepted is None:
            step = solve(lam)
            if step is not None and np.max(np.abs(step), initial=0.0) < cfg.param_tol:
                termination = "param_tol"
                break
            trial_cost = float("inf")
            if step is not None:
                trial = phi + step
                trial_eps, _, trial_cost = _try_evaluate(evaluate, trial, False)
            if trial_cost < cost:
                lam /= cfg.mu
                lambdas.append(lam)
                accepted = (trial, step)
            else:
                lam *= cfg.mu
                lambdas.append(lam)
                rejections += 1
                rejected_total += 1
                if rejections >= cfg.max_inner_rejections:
                    termination = "stalled"
                    break
        if accepted is None:
            break
        phi, step = accepted
        eps, jac, cost = _try_evaluate(evaluate, phi, True)
        costs.append(cost)
        log.debug("LM iter %d: cost %.6g, lambda %.3g", q, cost, lam)
        if np.max(np.abs(step)) < cfg.param_tol:
            termination = "param_tol"
            break
    return phi, OptimizerReport(costs, lambdas, termination, phi, q, rejected_total)


def gradient_descent(
    evaluate: Evaluator,
    phi0,
    step_size: float = 1e-3,
    max_iters: int = 1000,
    backtracking: bool = False,
    param_tol: float = 1e-10,
    divergence_factor: float = 1e12,
):
    """Steepest descent ``phi <- phi - alpha * 2 J^T eps``.

    With ``backtracking`` the step is halved until the cost decreases and
    doubled after each success; otherwise ``alpha`` is fixed and a cost above
    ``divergence_factor`` times the initial cost (or non-finite) stops the run
    as ``stalled``.
    """
    phi = np.array(phi0, dtype=float)
    eps, jac, cost = _try_evaluate(evaluate, phi, True)
    if eps is None or not np.isfinite(cost):
        return phi, OptimizerReport([], [], "singular_filter", phi, 0)
    cost0 = cost
    costs, alphas = [cost], []
    alpha = step_size
    termination = "max_iters"
    q = 0
    while q < max_iters:
        q += 1
        grad = 2.0 * jac.T @ eps
        gmax = np.max(np.abs(grad), initial=0.0)
        if alpha * gmax < param_tol:
            termination = "param_tol"
            break
        trial = phi - alpha * grad
        _, _, t_cost = _try_evaluate(evaluate, trial, False)
        if backtracking:
            while not t_cost < cost:
                alpha *= 0.5
                if alpha * gmax < param_tol:
                    break
                trial = phi - alpha * grad
                _, _, t_cost = _try_evaluate(evaluate, trial, False)
            if not t_cost < cost:
                termination = "param_tol"
                break
        elif not t_cost < divergence_factor * cost0:
            termination = "stalled"
            break
        phi = trial
        eps, jac, cost = _try_evaluate(evaluate, phi, True)
        costs.append(cost)
        alphas.append(alpha)
        if backtracking:
            alpha *= 2.0
    return phi, OptimizerReport(costs, alphas, termination, phi, q)


def oe_evaluator(coefffn, data: Dataset, orders: ModelOrders) -> Evaluator:
    """Residuals and Jacobian of the output-error cost as a function of ``phi``."""

    def evaluate(phi, jacobian):
        model = coefffn.with_params(phi)
        if jacobian:
            pred, jac = prediction_and_jacobian(model, data, orders)
            return pred.residuals, jac
        return predict(model, data, orders).residuals, None

    return evaluate


def lm_optimize(coefffn0, data: Dataset, orders: ModelOrders, cfg: LmConfig = LmConfig()):
    """Fit the coefficient map to the output-error cost with Levenberg-Marquardt."""
    phi, report = levenberg_marquardt(oe_evaluator(coefffn0, data, orders), coefffn0.params, cfg)
    return coefffn0.with_params(phi), report


def gradient_descent_optimize(
    coefffn0,
    data: Dataset,
    orders: ModelOrders,
    step_size: float = 1e-3,
    iters: int = 1000,
    backtracking: bool = True,
    param_tol: float = 1e-10,
):
    phi, report = gradient_descent(
        oe_evaluator(coefffn0, data, orders),
        coefffn0.params,
        step_size=step_size,
        max_iters=iters,
        backtracking=backtracking,
        param_tol=param_tol,
    )
    return coefffn0.with_params(phi), report


# --- Sanathanan-Koerner ----------------------------------------------------


@dataclass(frozen=True)
class SkState:
    """Outer SK iteration ``q`` with the b-trajectories of the frozen filter ``B_{q-1}``."""

    q: int
    frozen_b: np.ndarray
    inner: LmConfig = LmConfig(param_tol=1e-6)

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("SK iteration counter starts at 1")

    @classmethod
    def initial(cls, n_samples: int, orders: ModelOrders, inner: LmConfig = LmConfig(param_tol=1e-6)):
        """``q = 1`` with ``B_0 = 1``."""
        return cls(1, np.zeros((n_samples, orders.n_b - 1)), inner)

    def frozen_polynomial(self) -> np.ndarray:
        return np.hstack([np.ones((self.frozen_b.shape[0], 1)), self.frozen_b])


def sk_residuals(coefffn, data: Dataset, orders: ModelOrders, state: SkState, jacobian: bool = True):
    """Weighted equation-error residuals ``B_{q-1}^-1 (B u_meas - A y)`` and their Jacobian.

    The residual and every Jacobian column go through the frozen inverse filter
    in one stacked call.
    """
    if jacobian:
        values, pullback = linearize(coefffn, data.rho)
    else:
        values = coefffn.evaluate(data.rho)
    traj = CoefficientTrajectories.from_stacked(values, orders)
    dy = delta_powers(data.y, orders.n_a, data.ctx)
    du = delta_powers(data.u_meas, orders.n_b, data.ctx)
    equation_error = data.u_meas + np.sum(traj.b * du[:, 1:], axis=1) - np.sum(traj.a * dy, axis=1)
    if not jacobian:
        eps = generalized_inverse_filter(equation_error, state.frozen_polynomial(), data.ctx)
        return eps, None
    columns = pullback(np.hstack([-dy, du[:, 1:]]))
    stacked = np.column_stack([equation_error, columns])
    filtered = generalized_inverse_filter(stacked, state.frozen_polynomial(), data.ctx)
    return filtered[:, 0], filtered[:, 1:]


def sk_cost_and_gradient(coefffn, data: Dataset, orders: ModelOrders, state: SkState):
    """Return ``(V_SK, dV_SK/dphi, SK residuals)`` at the frozen filter of ``state``."""
    eps, jac = sk_residuals(coefffn, data, orders, state, jacobian=True)
    return float(eps @ eps), 2.0 * jac.T @ eps, eps


def sk_evaluator(coefffn, data: Dataset, orders: ModelOrders, state: SkState) -> Evaluator:
    def evaluate(phi, jacobian):
        return sk_residuals(coefffn.with_params(phi), data, orders, state, jacobian)

    return evaluate


def detect_divergence(costs, window: int = 3) -> bool:
    """True when the last ``window`` transitions of ``costs`` were all increases."""
    if len(costs) < window + 1:
        return False
    tail = np.asarray(costs[-(window + 1) :], dtype=float)
    tail = np.where(np.isfinite(tail), tail, np.inf)
    return bool(np.all((tail[1:] > tail[:-1]) | (np.isinf(tail[1:]))))


def sk_optimize(
    coefffn0,
    data: Dataset,
    orders: ModelOrders,
    outer_iters: int = 20,
    inner: LmConfig = LmConfig(param_tol=1e-6),
    rel_tol: float = 1e-6,
    divergence_window: int = 3,
):
    """Sanathanan-Koerner iterations with LM as the inner solver.

    Convergence is declared when ``V_SK`` changes by less than ``rel_tol``
    (relative) between outer iterations; divergence when the true cost ``V``
    rose over ``divergence_window`` consecutive outer iterations. Neither is
    raised as an exception: both are flags in ``report.extra``.
    """
    phi = coefffn0.params
    state = SkState.initial(len(data), orders, inner)
    v_hist, vsk_hist, inner_iters, outer_params = [], [], [], []
    termination = "max_iters"
    converged = diverged = False
    rejections = 0
    q = 0
    for q in range(1, outer_iters + 1):
        state = SkState(q, state.frozen_b, inner)
        phi_new, rep = levenberg_marquardt(sk_evaluator(coefffn0, data, orders, state), phi, inner)
        rejections += rep.inner_rejections_total
        if rep.termination == "singular_filter":
            termination = "singular_filter"
            break
        phi = phi_new
        model = coefffn0.with_params(phi)
        vsk_hist.append(rep.cost_history[-1])
        inner_iters.append(rep.iterations)
        outer_params.append(phi.copy())
        try:
            v = predict(model, data, orders).cost
        except SingularFilterError:
            v = float("inf")
        v_hist.append(v if np.isfinite(v) else float("inf"))
        log.debug("SK outer %d: V_SK %.6g, V %.6g", q, vsk_hist[-1], v_hist[-1])
        if detect_divergence(v_hist, divergence_window):
            diverged = True
            termination = "stalled"
            break
        if len(vsk_hist) > 1:
            prev = vsk_hist[-2]
            if abs(vsk_hist[-1] - prev) <= rel_tol * max(abs(prev), np.finfo(float).tiny):
                converged = True
                termination = "param_tol"
                break
        try:
            frozen_b = model.evaluate(data.rho)[:, orders.n_a :]
        except ValueError:
            termination = "singular_filter"
            break
        state = SkState(q, frozen_b, inner)

    report = OptimizerReport(
        cost_history=v_hist,
        lambda_history=[],
        termination=termination,
        final_params=phi,
        iterations=q,
        inner_rejections_total=rejections,
        extra={
            "sk_cost_history": vsk_hist,
            "inner_iterations": inner_iters,
            "converged": converged,
            "diverged": diverged,
            "outer_params": outer_params,
        },
    )
    return coefffn0.with_params(phi), report


# --- warm start ------------------------------------------------------------


def smoothing_factor(cutoff_hz: float, ctx: DeltaContext) -> float:
    """First-order exponential smoother gain with its -3 dB point at ``cutoff_hz``.

    A cutoff at or above Nyquist returns 1 (no smoothing).
    """
    nyquist = 0.5 / ctx.sample_time
    if cutoff_hz <= 0:
        raise ValueError("cutoff must be positive")
    if cutoff_hz >= nyquist:
        return 1.0
    cw = np.cos(2 * np.pi * cutoff_hz * ctx.sample_time)
    return float(cw - 1 + np.sqrt(cw * cw - 4 * cw + 3))


def zero_phase_smooth(x, cutoff_hz: float, ctx: DeltaContext) -> np.ndarray:
    """Forward-backward exponential smoothing (no phase lag)."""
    alpha = smoothing_factor(cutoff_hz, ctx)
    x = np.asarray(x, dtype=float)
    if alpha == 1.0:
        return x.copy()
    return signal.filtfilt([alpha], [1.0, alpha - 1.0], x)


def arx_warm_start(
    coefffn0,
    data: Dataset,
    orders: ModelOrders,
    cutoff_hz: Optional[float] = None,
    cfg: LmConfig = LmConfig(),
):
    """Fit the plain equation-error (ARX) cost on smoothed data.

    ``cutoff_hz`` defaults to a tenth of the Nyquist frequency.
    """
    if cutoff_hz is None:
        cutoff_hz = 0.1 * 0.5 / data.ctx.sample_time
    smoothed = data.with_signals(
        u_meas=zero_phase_smooth(data.u_meas, cutoff_hz, data.ctx),
        y=zero_phase_smooth(data.y, cutoff_hz, data.ctx),
    )
    state = SkState.initial(len(data), orders, cfg)
    phi, report = levenberg_marquardt(sk_evaluator(coefffn0, smoothed, orders, state), coefffn0.params, cfg)
    return coefffn0.with_params(phi), report


def coefficient_scales(data: Dataset, orders: ModelOrders, cutoff_hz: Optional[float] = None) -> np.ndarray:
    """Typical magnitude of each coefficient, ``std(u_meas) / rms(regressor)``.

    The regressor of ``a_i`` is ``delta^i y``; that of ``b_i`` is ``delta^i``
    of the input smoothed at ``cutoff_hz`` (default a tenth of Nyquist), so the
    noise does not dominate its differences. Used as fixed output gains of a
    :class:`~nnlpv.scheduling_net.ScaledMap`. Degenerate regressors get scale 1.
    """
    if cutoff_hz is None:
        cutoff_hz = 0.1 * 0.5 / data.ctx.sample_time
    u_smooth = zero_phase_smooth(data.u_meas, cutoff_hz, data.ctx)
    rms = np.concatenate(
        [
            np.sqrt(np.mean(delta_powers(data.y, orders.n_a, data.ctx) ** 2, axis=0)),
            np.sqrt(np.mean(delta_powers(u_smooth, orders.n_b, data.ctx)[:, 1:] ** 2, axis=0)),
        ]
    )
    level = float(np.std(data.u_meas))
    with np.errstate(divide="ignore", invalid="ignore"):
        scales = level / rms
    return np.where(np.isfinite(scales) & (scales > 0), scales, 1.0)
