"""Coefficient functions mapping the scheduling signal to LPV coefficients.

Two interchangeable implementations are provided:

* :class:`SchedulingNet`, a fully connected MLP ``g(x)`` with analytic layer
  sensitivities and parameter Jacobians.
* :class:`PolynomialBasisMap`, a monomial expansion per coefficient, linear in
  its parameters.

Both expose ``n_params``, ``params``, ``with_params``, ``output_dim``,
``evaluate(rho)`` and ``jacobian(rho)``, which is all the predictor and the
optimizers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lpv_filter import CoefficientTrajectories, DimensionError, ModelOrders

ACTIVATIONS = ("tanh", "relu")


class _EvalCounter:
    """Number of network inputs pushed through a forward pass."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


forward_evals = _EvalCounter()


def _activate(z, activation):
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_derivative(z, h, activation):
    if activation == "tanh":
        return 1.0 - h * h
    # derivative at 0 taken as 0
    return (z > 0).astype(float)


@dataclass(frozen=True)
class ForwardCache:
    """Activations ``h[l]`` (l = 0..L) and pre-activations ``z[l]`` (l = 1..L) of a batch.

    ``z[0]`` is ``None`` so that list indices match layer numbers.
    """

    h: list
    z: list


@dataclass(frozen=True)
class LayerSensitivities:
    """``deltas[l] = d g / d z^l`` for l = 1..L+1, each of shape ``(B, n_out, N_l)``.

    ``deltas[L + 1]`` is the identity (the output is ``z^{L+1}``); ``deltas[0]``
    is ``None``.
    """

    deltas: list
    cache: ForwardCache


@dataclass(frozen=True, eq=False)
class SchedulingNet:
    """MLP with ``layer_sizes = [N_rho, N_1, ..., N_L, n_out]``.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])`` and
    ``biases[l]`` shape ``(layer_sizes[l+1],)``; the output layer is linear.
    """

    layer_sizes: tuple
    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DimensionError("one weight matrix and bias vector per layer transition required")
        ws, bs = [], []
        for l, (w, c) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=float)
            c = np.array(c, dtype=float).reshape(-1)
            if w.shape != (sizes[l + 1], sizes[l]) or c.shape != (sizes[l + 1],):
                raise DimensionError(f"layer {l}: weight {w.shape} / bias {c.shape} inconsistent with {sizes}")
            w.flags.writeable = False
            c.flags.writeable = False
            ws.append(w)
            bs.append(c)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], activation="tanh", seed=None) -> "SchedulingNet":
        """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            s = 1.0 / np.sqrt(n_in)
            ws.append(rng.uniform(-s, s, size=(n_out, n_in)))
            bs.append(np.zeros(n_out))
        return cls(tuple(layer_sizes), tuple(ws), tuple(bs), activation)

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return parameter_count(self.layer_sizes)

    @property
    def params(self) -> np.ndarray:
        return flatten(self)

    def with_params(self, values) -> "SchedulingNet":
        return unflatten(values, self.layer_sizes, self.activation)

    def evaluate(self, rho) -> np.ndarray:
        out, _ = net_forward(self, rho)
        return out

    def jacobian(self, rho):
        """Outputs ``(B, n_out)`` and per-input parameter Jacobians ``(B, n_out, n_params)``."""
        out, cache = net_forward(self, rho)
        sens = layer_sensitivities(self, cache)
        return out, param_jacobian(self, sens)

    def linearize(self, rho):
        """Outputs and a pullback ``w -> sum_i w[:, i] * d out_i / d phi`` of shape ``(B, n_params)``.

        Equivalent to contracting :meth:`jacobian` with ``w`` but propagates
        one vector per input instead of the full sensitivity matrices.
        """
        out, cache = net_forward(self, rho)
        return out, lambda w: _net_pullback(self, cache, w)


def parameter_count(layer_sizes: Sequence[int]) -> int:
    return sum(n_out * n_in + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def flatten(net: SchedulingNet) -> np.ndarray:
    """``[vec(W^0); c^0; ...; vec(W^L); c^L]`` with column-stacked ``vec``."""
    parts = []
    for w, c in zip(net.weights, net.biases):
        parts.append(w.reshape(-1, order="F"))
        parts.append(c)
    return np.concatenate(parts)


def unflatten(values, layer_sizes: Sequence[int], activation: str = "tanh") -> SchedulingNet:
    values = np.asarray(values, dtype=float).reshape(-1)
    expected = parameter_count(layer_sizes)
    if values.size != expected:
        raise DimensionError(f"expected {expected} parameters for {tuple(layer_sizes)}, got {values.size}")
    ws, bs = [], []
    pos = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        ws.append(values[pos : pos + n_out * n_in].reshape((n_out, n_in), order="F"))
        pos += n_out * n_in
        bs.append(values[pos : pos + n_out])
        pos += n_out
    return SchedulingNet(tuple(layer_sizes), tuple(ws), tuple(bs), activation)


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"input of shape {x.shape} incompatible with input width {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite scheduling input")
    return x


def net_forward(net: SchedulingNet, x):
    """Forward pass over a batch of inputs ``x`` of shape ``(B, N_rho)``.

    A 1-D ``x`` is read as a batch of scalars when ``N_rho == 1`` and as a single
    input otherwise.
    """
    x = _as_batch(x, net.input_dim)
    forward_evals.count += x.shape[0]
    h = [x]
    z = [None]
    for l in range(net.n_hidden):
        zl = h[-1] @ net.weights[l].T + net.biases[l]
        z.append(zl)
        h.append(_activate(zl, net.activation))
    out = h[-1] @ net.weights[-1].T + net.biases[-1]
    return out, ForwardCache(h=h, z=z)


def layer_sensitivities(net: SchedulingNet, cache: ForwardCache) -> LayerSensitivities:
    """Backpropagate ``d g / d z^l`` for all outputs at once."""
    batch = cache.h[0].shape[0]
    n_out = net.output_dim
    L = net.n_hidden
    deltas = [None] * (L + 2)
    deltas[L + 1] = np.broadcast_to(np.eye(n_out), (batch, n_out, n_out))
    for l in range(L, 0, -1):
        # d z^{l+1} / d z^l = W^l diag(kappa'(z^l))
        dk = _activate_derivative(cache.z[l], cache.h[l], net.activation)
        deltas[l] = (deltas[l + 1] @ net.weights[l]) * dk[:, None, :]
    return LayerSensitivities(deltas=deltas, cache=cache)


def _net_pullback(net: SchedulingNet, cache: ForwardCache, w) -> np.ndarray:
    h = cache.h
    batch = h[0].shape[0]
    e = np.asarray(w, dtype=float).reshape(batch, net.output_dim)  # d/d z^{L+1}
    blocks = [None] * (2 * (net.n_hidden + 1))
    for l in range(net.n_hidden, -1, -1):
        # column-stacked vec(W^l): index n * N_{l+1} + m
        blocks[2 * l] = (h[l][:, :, None] * e[:, None, :]).reshape(batch, -1)
        blocks[2 * l + 1] = e
        if l > 0:
            e = (e @ net.weights[l]) * _activate_derivative(cache.z[l], h[l], net.activation)
    return np.concatenate(blocks, axis=1)


def linearize(coefffn, rho):
    """``(outputs, pullback)`` of any coefficient map, using its own method when available."""
    if hasattr(coefffn, "linearize"):
        return coefffn.linearize(rho)
    out, jac = coefffn.jacobian(rho)
    return out, lambda w: np.einsum("km,kmp->kp", w, jac)


def param_jacobian(net: SchedulingNet, sens: LayerSensitivities) -> np.ndarray:
    """``d g / d phi`` per input, shape ``(B, n_out, n_params)``, in flattening order.

    For the layer owning ``W^l, c^l`` (whose output is ``z^{l+1}``):
    ``d g_i / d W^l_{m,n} = deltas[l+1][i, m] * h^l_n`` and
    ``d g_i / d c^l_m = deltas[l+1][i, m]``.
    """
    h = sens.cache.h
    batch = h[0].shape[0]
    out = np.empty((batch, net.output_dim, net.n_params))
    pos = 0
    for l in range(net.n_hidden + 1):
        d = sens.deltas[l + 1]  # (B, n_out, N_{l+1})
        n_in, n_next = net.layer_sizes[l], net.layer_sizes[l + 1]
        # column-stacked vec: index n * N_{l+1} + m
        wblock = out[:, :, pos : pos + n_in * n_next].reshape(batch, net.output_dim, n_in, n_next)
        np.multiply(h[l][:, None, :, None], d[:, :, None, :], out=wblock)
        pos += n_in * n_next
        out[:, :, pos : pos + n_next] = d
        pos += n_next
    return out


@dataclass(frozen=True, eq=False)
class PolynomialBasisMap:
    """Monomial expansion ``f_i(rho) = sum_{j<=deg_i} theta_i^j rho^j`` for scalar rho.

    Parameters are stored coefficient function by coefficient function, lowest
    power first.
    """

    degrees: tuple
    coefficients: np.ndarray = field(default=None)

    def __post_init__(self):
        degrees = tuple(int(d) for d in self.degrees)
        if not degrees or min(degrees) < 0:
            raise ValueError(f"invalid degrees {self.degrees}")
        n = sum(d + 1 for d in degrees)
        coef = np.zeros(n) if self.coefficients is None else np.array(self.coefficients, dtype=float).reshape(-1)
        if coef.size != n:
            raise DimensionError(f"expected {n} coefficients for degrees {degrees}, got {coef.size}")
        coef.flags.writeable = False
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "coefficients", coef)

    @classmethod
    def uniform(cls, n_out: int, degree: int, coefficients=None) -> "PolynomialBasisMap":
        return cls((degree,) * n_out, coefficients)

    @property
    def input_dim(self) -> int:
        return 1

    @property
    def output_dim(self) -> int:
        return len(self.degrees)

    @property
    def n_params(self) -> int:
        return self.coefficients.size

    @property
    def params(self) -> np.ndarray:
        return self.coefficients.copy()

    def with_params(self, values) -> "PolynomialBasisMap":
        return PolynomialBasisMap(self.degrees, values)

    def _powers(self, rho):
        x = _as_batch(rho, 1)[:, 0]
        return np.vander(x, max(self.degrees) + 1, increasing=True)

    def evaluate(self, rho) -> np.ndarray:
        powers = self._powers(rho)
        out = np.empty((powers.shape[0], self.output_dim))
        pos = 0
        for i, d in enumerate(self.degrees):
            out[:, i] = powers[:, : d + 1] @ self.coefficients[pos : pos + d + 1]
            pos += d + 1
        return out

    def jacobian(self, rho):
        powers = self._powers(rho)
        jac = np.zeros((powers.shape[0], self.output_dim, self.n_params))
        pos = 0
        for i, d in enumerate(self.degrees):
            jac[:, i, pos : pos + d + 1] = powers[:, : d + 1]
            pos += d + 1
        return self.evaluate(rho), jac

    def linearize(self, rho):
        powers = self._powers(rho)

        def pullback(w):
            w = np.asarray(w, dtype=float)
            return np.hstack([w[:, [i]] * powers[:, : d + 1] for i, d in enumerate(self.degrees)])

        return self.evaluate(rho), pullback


def evaluate_trajectories(coefffn, rho, orders: ModelOrders) -> CoefficientTrajectories:
    """Evaluate the coefficient functions along a scheduling trajectory."""
    if coefffn.output_dim != orders.n_coefficients:
        raise DimensionError(
            f"coefficient map has {coefffn.output_dim} outputs, orders need {orders.n_coefficients}"
        )
    return CoefficientTrajectories.from_stacked(coefffn.evaluate(rho), orders)


@dataclass(frozen=True, eq=False)
class ScaledMap:
    """Coefficient map with fixed per-output gains: ``f(rho) = scale * inner(rho)``.

    The gains are not trained. They bring the seven coefficient functions,
    whose magnitudes span several decades, to a common order so that the
    damped Gauss-Newton steps are well balanced. For an MLP this is the same
    function class as rescaling the rows of the output layer.
    """

    inner: object
    scale: np.ndarray

    def __post_init__(self):
        scale = np.array(self.scale, dtype=float).reshape(-1)
        if scale.shape != (self.inner.output_dim,):
            raise DimensionError(f"scale has {scale.size} entries, map has {self.inner.output_dim} outputs")
        if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise ValueError("output scales must be finite and positive")
        scale.flags.writeable = False
        object.__setattr__(self, "scale", scale)

    @property
    def input_dim(self) -> int:
        return self.inner.input_dim

    @property
    def output_dim(self) -> int:
        return self.inner.output_dim

    @property
    def n_params(self) -> int:
        return self.inner.n_params

    @property
    def params(self) -> np.ndarray:
        return self.inner.params

    def with_params(self, values) -> "ScaledMap":
        return ScaledMap(self.inner.with_params(values), self.scale)

    def evaluate(self, rho) -> np.ndarray:
        return self.inner.evaluate(rho) * self.scale

    def jacobian(self, rho):
        out, jac = self.inner.jacobian(rho)
        return out * self.scale, jac * self.scale[None, :, None]

    def linearize(self, rho):
        out, pullback = linearize(self.inner, rho)
        return out * self.scale, lambda w: pullback(np.asarray(w, dtype=float) * self.scale)


def unscaled(coefffn):
    """Strip any :class:`ScaledMap` wrappers."""
    while isinstance(coefffn, ScaledMap):
        coefffn = coefffn.inner
    return coefffn
