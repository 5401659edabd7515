"""Two-mass motion system with scheduling-dependent damping.

The plant obeys (in delta-operator form, coefficients evaluated at rho(k))::

    k1 k2 y + (d1 k2 + k1 d2) dy + (k1 m2 + k2 (m1 + m2) + d1 d2) d^2y
        + (d1 m2 + (m1 + m2) d2) d^3y + m1 m2 d^4y = k2 u + d2 du + m2 d^2u

with ``d2(rho) = 1e3 exp(-1e2 rho^2) + 1e2 rho^2 + 1e-4``. Data are produced by
choosing a smooth output ``y`` and solving this equation for the input ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.interpolate import PPoly

from .lpv_filter import (
    CoefficientTrajectories,
    DeltaContext,
    ModelOrders,
    apply_polynomial,
    generalized_inverse_filter,
    leading_gain,
)
from .oe_predictor import Dataset, predict

BENCHMARK_ORDERS = ModelOrders(n_a=5, n_b=3)
COEFFICIENT_NAMES = ("a0", "a1", "a2", "a3", "a4", "b1", "b2")
RHO_GRID = np.linspace(-1.0, 1.0, 201)


@dataclass(frozen=True)
class BenchmarkSystem:
    m1: float = 10.0
    m2: float = 11.0
    d1: float = 5.0
    k1: float = 0.3
    k2: float = 5e4

    def d2(self, rho):
        rho = np.asarray(rho, dtype=float)
        return 1e3 * np.exp(-1e2 * rho**2) + 1e2 * rho**2 + 1e-4

    def raw_coefficients(self, rho):
        """Unnormalized ``(y-side, u-side)`` coefficients, shapes ``(N, 5)`` and ``(N, 3)``."""
        rho = np.asarray(rho, dtype=float).reshape(-1)
        m1, m2, d1, k1, k2 = self.m1, self.m2, self.d1, self.k1, self.k2
        d2 = self.d2(rho)
        one = np.ones_like(rho)
        a = np.column_stack(
            [
                k1 * k2 * one,
                d1 * k2 + k1 * d2,
                k1 * m2 + k2 * (m1 + m2) + d1 * d2,
                d1 * m2 + (m1 + m2) * d2,
                m1 * m2 * one,
            ]
        )
        b = np.column_stack([k2 * one, d2, m2 * one])
        return a, b


def true_coefficients(sys: BenchmarkSystem, rho) -> CoefficientTrajectories:
    """Plant coefficients divided by ``k2`` so that the u-side polynomial is monic."""
    a, b = sys.raw_coefficients(rho)
    return CoefficientTrajectories(a / sys.k2, b[:, 1:] / sys.k2, BENCHMARK_ORDERS)


class TrueCoefficientMap:
    """Parameter-free coefficient map returning the plant's own coefficients."""

    input_dim = 1
    output_dim = BENCHMARK_ORDERS.n_coefficients
    n_params = 0

    def __init__(self, sys: BenchmarkSystem = BenchmarkSystem()):
        self.sys = sys

    @property
    def params(self):
        return np.zeros(0)

    def with_params(self, values):
        if np.size(values):
            raise ValueError("the true coefficient map has no parameters")
        return self

    def evaluate(self, rho):
        traj = true_coefficients(self.sys, np.asarray(rho, dtype=float).reshape(-1))
        return np.hstack([traj.a, traj.b])

    def jacobian(self, rho):
        out = self.evaluate(rho)
        return out, np.zeros(out.shape + (0,))


@dataclass(frozen=True)
class NoiseSpec:
    relative_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.relative_std >= 0:
            raise ValueError("relative_std must be >= 0")


# Snap sign pattern over eight equal phases; integrates to a rest-to-rest move.
_SNAP_PATTERN = np.array([1, -1, -1, 1, -1, 1, 1, -1], dtype=float)

# Lowpass cutoff of the equation-error warm start for this plant. Above a few
# hertz the b2 * delta^2 term lifts the smoothed noise back to a flat floor
# and the equation-error fit loses the lightly damped u-side zeros.
DEFAULT_WARM_START_CUTOFF_HZ = 2.0


@dataclass(frozen=True)
class ReferenceSpec:
    """Staircase of equal snap-limited moves from 0 up to ``amplitude``.

    The record opens with ``dwell_samples`` at rest; every move of
    ``move_samples`` samples is followed by the same dwell. As many moves as
    fit are used, each of height ``amplitude / n_moves``; leftover samples
    rest at ``amplitude``. Short moves excite the plant resonance, and the
    dwells let it ring out at the current scheduling value.
    """

    n_samples: int = 6400
    amplitude: float = 1.0
    move_samples: int = 80
    dwell_samples: int = 60

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError(f"reference needs at least 100 samples, got {self.n_samples}")
        if self.move_samples < 8 or self.dwell_samples < 1:
            raise ValueError("moves need >= 8 samples and dwells >= 1 sample")
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")

    def move_starts(self) -> list:
        """First sample of every move that fits entirely in the record."""
        return list(range(self.dwell_samples, self.n_samples - self.move_samples, self.move_samples + self.dwell_samples))


def move_profile(n: int) -> np.ndarray:
    """Unit rest-to-rest move sampled at ``t = 0..n`` with piecewise-constant snap."""
    breaks = np.linspace(0.0, float(n), 9)
    snap = PPoly(_SNAP_PATTERN[None, :], breaks)
    pos = snap.antiderivative(4)
    samples = pos(np.arange(n + 1, dtype=float))
    return samples / samples[-1]


def generate_reference(spec: ReferenceSpec, ctx: Optional[DeltaContext] = None) -> np.ndarray:
    """Reference ``r`` of ``spec.n_samples`` samples; ``ctx`` is unused (plan is in samples)."""
    n, m = spec.n_samples, spec.move_samples
    starts = spec.move_starts()
    if not starts:
        raise ValueError("no move fits in the requested record")
    r = np.zeros(n)
    shape = move_profile(m)
    height = spec.amplitude / len(starts)
    for i, start in enumerate(starts):
        r[start : start + m + 1] = height * (i + shape)
        r[start + m + 1 :] = height * (i + 1)
    return r


def linear_ramp(n: int, reverse: bool = False) -> np.ndarray:
    """``rho(k) = 2 (k - 1) / (N - 1) - 1`` for k = 1..N, optionally time-reversed."""
    rho = np.linspace(-1.0, 1.0, n)
    return rho[::-1].copy() if reverse else rho


@dataclass(frozen=True)
class BenchmarkData:
    """Dataset plus ground truth known only in simulation."""

    dataset: Dataset
    u_clean: np.ndarray
    noise: np.ndarray

    @property
    def noise_variance(self) -> float:
        """Realized noise power ``mean(v^2)``."""
        return float(np.mean(self.noise**2))


def generate_dataset(
    sys: BenchmarkSystem = BenchmarkSystem(),
    spec: ReferenceSpec = ReferenceSpec(),
    noise: NoiseSpec = NoiseSpec(),
    ctx: DeltaContext = DeltaContext(1e-3),
    rho: Union[str, Sequence[float], np.ndarray] = "linear_ramp",
) -> BenchmarkData:
    """Simulate the plant in reverse: ``y = r`` is given, ``u`` solved from the plant equation.

    ``rho`` is ``"linear_ramp"``, ``"reversed_ramp"`` or an explicit trajectory.
    """
    n = spec.n_samples
    if isinstance(rho, str):
        if rho not in ("linear_ramp", "reversed_ramp"):
            raise ValueError(f"unknown rho mode {rho!r}")
        rho = linear_ramp(n, reverse=rho == "reversed_ramp")
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if rho.shape[0] != n:
        raise ValueError(f"rho has {rho.shape[0]} samples, expected {n}")

    y = generate_reference(spec, ctx)
    a_raw, b_raw = sys.raw_coefficients(rho)
    gain = leading_gain(b_raw, ctx)
    assert np.all(gain > 0), "plant u-side leading gain must be positive"
    u = generalized_inverse_filter(apply_polynomial(y, a_raw, ctx), b_raw, ctx)

    rng = np.random.default_rng(noise.seed)
    v = rng.normal(0.0, noise.relative_std * np.std(u), size=n) if noise.relative_std > 0 else np.zeros(n)
    return BenchmarkData(Dataset(u + v, y, rho, ctx), u, v)


def autocorrelation(x, max_lag: int = 20) -> np.ndarray:
    """Normalized sample autocorrelation at lags 1..max_lag."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    denom = float(x @ x)
    if denom == 0:
        return np.zeros(max_lag)
    return np.array([float(x[lag:] @ x[:-lag]) / denom for lag in range(1, max_lag + 1)])


def coefficient_errors(coefffn, sys: BenchmarkSystem = BenchmarkSystem(), grid=RHO_GRID) -> dict:
    """RMSE of every coefficient function against the plant on a rho grid.

    ``relative`` divides by the RMS of the true function on the grid.
    """
    est = coefffn.evaluate(grid)
    truth = TrueCoefficientMap(sys).evaluate(grid)
    out = {}
    for i, name in enumerate(COEFFICIENT_NAMES):
        rmse = float(np.sqrt(np.mean((est[:, i] - truth[:, i]) ** 2)))
        scale = float(np.sqrt(np.mean(truth[:, i] ** 2)))
        out[name] = {"rmse": rmse, "relative": rmse / scale}
    return out


def evaluate_model(
    coefffn,
    data: Dataset,
    clean_u=None,
    sys: Optional[BenchmarkSystem] = BenchmarkSystem(),
    orders: ModelOrders = BENCHMARK_ORDERS,
    max_lag: int = 20,
) -> dict:
    """Normalized cost, residual whiteness and (optionally) coefficient accuracy."""
    pred = predict(coefffn, data, orders)
    n = len(data)
    acf = autocorrelation(pred.residuals, max_lag)
    band = 2.0 / np.sqrt(n)
    metrics = {
        "n_samples": n,
        "normalized_cost": pred.cost / n,
        "whiteness": {
            "autocorrelation": acf.tolist(),
            "band": band,
            "lags_within_band": int(np.sum(np.abs(acf) <= band)),
        },
    }
    if clean_u is not None:
        v = data.u_meas - np.asarray(clean_u, dtype=float)
        metrics["noise_variance"] = float(np.mean(v**2))
        metrics["cost_to_noise"] = metrics["normalized_cost"] / metrics["noise_variance"] if np.any(v) else None
        metrics["clean_input_mse"] = float(np.mean((pred.u_hat - clean_u) ** 2))
    if sys is not None and orders == BENCHMARK_ORDERS and getattr(coefffn, "input_dim", 1) == 1:
        metrics["coefficient_errors"] = coefficient_errors(coefffn, sys)
    return metrics


def frozen_frequency_response(sys: BenchmarkSystem, rho_values, freqs_hz, ctx: DeltaContext = DeltaContext(1e-3)):
    """Frozen-rho response ``Y/U`` of the plant, rows per rho, columns per frequency.

    The delta operator is evaluated on the unit circle, ``delta = (1 - e^{-jwT}) / T``.
    """
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=float)
    delta = (1 - np.exp(-1j * w * ctx.sample_time)) / ctx.sample_time
    a, b = sys.raw_coefficients(np.asarray(rho_values, dtype=float))
    powers_a = delta[None, :, None] ** np.arange(a.shape[1])
    powers_b = delta[None, :, None] ** np.arange(b.shape[1])
    num = np.sum(b[:, None, :] * powers_b, axis=2)
    den = np.sum(a[:, None, :] * powers_a, axis=2)
    return num / den
