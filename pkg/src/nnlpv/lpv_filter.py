"""Delta-operator filtering with scheduling-dependent coefficients.

Signals are indexed k = 0..N-1 and treated as zero before the first sample.
A time-varying coefficient evaluated at step k multiplies the whole backward
difference stencil of that step, i.e. ``(a_i delta^i y)(k) = a_i(k) * sum_j
w_ij y(k - j)``.

All filters accept a single signal of shape ``(N,)`` or a stack of signals of
shape ``(N, P)`` filtered column-wise with the same coefficients.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from numba import njit


class DimensionError(ValueError):
    """Raised when signal and coefficient shapes disagree."""


class SingularFilterError(ArithmeticError):
    """The leading gain of an inverse filter vanished at some step."""

    def __init__(self, step: int, gain: float):
        self.step = step
        self.gain = gain
        super().__init__(f"singular leading coefficient {gain:.3e} at step k={step}")


@dataclass(frozen=True)
class DeltaContext:
    """Sampling time shared by all delta-operator computations."""

    sample_time: float

    def __post_init__(self):
        if not np.isfinite(self.sample_time) or self.sample_time <= 0:
            raise ValueError(f"sample_time must be > 0, got {self.sample_time}")


@dataclass(frozen=True)
class ModelOrders:
    """Number of a-coefficients (delta^0..delta^{n_a-1}) and b-polynomial length.

    The b-polynomial is monic, so only ``n_b - 1`` of its coefficients are free.
    """

    n_a: int
    n_b: int

    def __post_init__(self):
        if self.n_a < 1 or self.n_b < 1:
            raise ValueError(f"orders must be >= 1, got n_a={self.n_a}, n_b={self.n_b}")

    @property
    def n_coefficients(self) -> int:
        return self.n_a + self.n_b - 1


@dataclass(frozen=True)
class CoefficientTrajectories:
    """Per-step coefficient values ``a[k, i] = a_i(rho(k))``, ``b[k, i-1] = b_i(rho(k))``."""

    a: np.ndarray
    b: np.ndarray
    orders: ModelOrders

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 1 and b.size == 0:
            b = np.zeros((a.shape[0], 0))
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError("coefficient trajectories must be 2-D")
        if a.shape[1] != self.orders.n_a or b.shape[1] != self.orders.n_b - 1:
            raise DimensionError(
                f"expected {self.orders.n_a} a- and {self.orders.n_b - 1} b-columns, "
                f"got {a.shape[1]} and {b.shape[1]}"
            )
        if a.shape[0] != b.shape[0]:
            raise DimensionError("a and b trajectories differ in length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficient trajectories contain non-finite values")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_stacked(cls, values: np.ndarray, orders: ModelOrders) -> "CoefficientTrajectories":
        """Split an ``(N, n_a + n_b - 1)`` array into its a- and b-blocks."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != orders.n_coefficients:
            raise DimensionError(
                f"expected {orders.n_coefficients} coefficient columns, got shape {values.shape}"
            )
        return cls(values[:, : orders.n_a], values[:, orders.n_a :], orders)

    def __len__(self) -> int:
        return self.a.shape[0]

    def b_monic(self) -> np.ndarray:
        """b-coefficients with the leading 1 prepended, shape ``(N, n_b)``."""
        return np.hstack([np.ones((len(self), 1)), self.b])


# Instrumentation of the sequential (and therefore expensive) inverse recursion.
_inverse_calls = 0


@contextlib.contextmanager
def count_inverse_filter_calls():
    """Count inverse-filter invocations made inside the ``with`` block.

    >>> with count_inverse_filter_calls() as counter:
    ...     _ = inverse_monic_filter(w, coeffs, ctx)   # doctest: +SKIP
    >>> counter.count   # doctest: +SKIP
    1
    """

    class _Counter:
        count = 0

    counter = _Counter()
    start = _inverse_calls
    try:
        yield counter
    finally:
        counter.count = _inverse_calls - start


@lru_cache(maxsize=64)
def _delta_weights_cached(i: int, sample_time: float) -> tuple:
    scale = sample_time ** (-i)
    return tuple(scale * comb(i, j) * (-1) ** j for j in range(i + 1))


def delta_weights(i: int, ctx: DeltaContext) -> np.ndarray:
    """Shift weights of ``delta^i``: ``(delta^i x)(k) = sum_j w[j] x(k - j)``."""
    if i < 0:
        raise ValueError("delta power must be nonnegative")
    return np.array(_delta_weights_cached(int(i), float(ctx.sample_time)))


def _shift(x: np.ndarray, j: int) -> np.ndarray:
    if j == 0:
        return x
    out = np.zeros_like(x)
    out[j:] = x[:-j] if j < len(x) else 0.0
    return out


def delta_powers(x: np.ndarray, count: int, ctx: DeltaContext) -> np.ndarray:
    """Stack ``delta^0 x, ..., delta^{count-1} x`` along a new trailing axis.

    For ``x`` of shape ``(N,)`` the result is ``(N, count)``; for ``(N, P)`` it is
    ``(N, P, count)``. Computed as repeated first differences, which is the
    same operator as the binomial stencil (zero pre-window included) but avoids
    its cancellation when ``sample_time`` is small.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (count,))
    d = x
    for i in range(count):
        out[..., i] = d
        d = (d - _shift(d, 1)) / ctx.sample_time
    return out


def stencil_weights(poly: np.ndarray, ctx: DeltaContext) -> np.ndarray:
    """Expand per-step delta-polynomial coefficients into per-step shift weights.

    ``poly[k, i]`` multiplies ``delta^i``; the result ``c[k, j]`` multiplies
    ``x(k - j)``.
    """
    poly = np.asarray(poly, dtype=float)
    n, m = poly.shape
    c = np.zeros((n, m))
    for i in range(m):
        w = delta_weights(i, ctx)
        c[:, : i + 1] += poly[:, i : i + 1] * w[None, :]
    return c


def _check_length(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[0] != n:
        raise DimensionError(f"signal of shape {x.shape} does not match {n} coefficient rows")
    return x


def apply_polynomial(x: np.ndarray, poly: np.ndarray, ctx: DeltaContext) -> np.ndarray:
    """Apply ``sum_i poly[k, i] delta^i`` to ``x`` (no monic assumption)."""
    poly = np.asarray(poly, dtype=float)
    x = _check_length(x, poly.shape[0])
    powers = delta_powers(x, poly.shape[1], ctx)
    if x.ndim == 2:
        poly = poly[:, None, :]
    return np.sum(poly * powers, axis=-1)


def apply_a_polynomial(y, coeffs: CoefficientTrajectories, ctx: DeltaContext) -> np.ndarray:
    """``A(delta, rho) y`` with ``A = sum_{i<n_a} a_i(rho(k)) delta^i``."""
    return apply_polynomial(y, coeffs.a, ctx)


def apply_b_polynomial(u, coeffs: CoefficientTrajectories, ctx: DeltaContext) -> np.ndarray:
    """``B(delta, rho) u`` with monic ``B = 1 + sum_{i>=1} b_i(rho(k)) delta^i``."""
    return apply_polynomial(u, coeffs.b_monic(), ctx)


def leading_gain(poly: np.ndarray, ctx: DeltaContext) -> np.ndarray:
    """Instantaneous gain ``c0(k) = sum_i poly[k, i] T_s^-i`` on the current sample."""
    poly = np.asarray(poly, dtype=float)
    scale = ctx.sample_time ** -np.arange(poly.shape[1], dtype=float)
    return poly @ scale


def _inverse_recursion(w: np.ndarray, poly: np.ndarray, ctx: DeltaContext) -> np.ndarray:
    global _inverse_calls
    _inverse_calls += 1

    poly = np.asarray(poly, dtype=float)
    w = _check_length(w, poly.shape[0])
    c = stencil_weights(poly, ctx)
    c0 = c[:, 0]
    tol = 1e-12 * max(1.0, float(np.max(np.abs(c0)))) if len(c0) else 0.0
    bad = np.flatnonzero(~(np.abs(c0) > tol))
    if bad.size:
        k = int(bad[0])
        raise SingularFilterError(k, float(c0[k]))

    if c.shape[1] == 1:
        return w / (c0[:, None] if w.ndim == 2 else c0)
    if w.size == 0:
        return np.zeros_like(w)
    cols = np.ascontiguousarray(w.reshape(w.shape[0], -1))
    out = _recursion_kernel(np.ascontiguousarray(c), 1.0 / c0, cols)
    return out.reshape(w.shape)


@njit(cache=True)
def _recursion_kernel(c, inv_c0, w):
    # u(k) = (w(k) - sum_{j>=1} c[k, j] u(k - j)) / c[k, 0], column by column
    n, m = c.shape
    p = w.shape[1]
    out = np.zeros((n, p))
    for k in range(n):
        jmax = min(m, k + 1)
        for col in range(p):
            acc = w[k, col]
            for j in range(1, jmax):
                acc -= c[k, j] * out[k - j, col]
            out[k, col] = acc * inv_c0[k]
    return out


def inverse_monic_filter(w, coeffs: CoefficientTrajectories, ctx: DeltaContext) -> np.ndarray:
    """Solve ``B(delta, rho) u = w`` for ``u`` by forward recursion.

    Raises
    ------
    SingularFilterError
        If ``|c0(k)| <= 1e-12 * max(1, max_k |c0(k)|)`` at any step.
    """
    return _inverse_recursion(w, coeffs.b_monic(), ctx)


def generalized_inverse_filter(w, b_raw: np.ndarray, ctx: DeltaContext) -> np.ndarray:
    """Solve ``sum_i b_raw[k, i] delta^i u = w`` where ``b_raw[:, 0]`` need not be 1."""
    return _inverse_recursion(w, b_raw, ctx)
