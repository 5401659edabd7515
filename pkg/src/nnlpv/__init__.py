"""Inverse LPV input-output models with neural-network coefficient functions.

The model ``B(delta, rho) u = A(delta, rho) y`` maps a planned output ``y`` to
the input ``u`` that produces it; the coefficients of ``A`` and ``B`` are
functions of a scheduling signal ``rho`` given by an MLP (or a polynomial
basis). Parameters are estimated by minimizing the output-error cost with
Levenberg-Marquardt, with Sanathanan-Koerner iterations and gradient descent
as alternatives.
"""

from .lpv_filter import (
    CoefficientTrajectories,
    DeltaContext,
    DimensionError,
    ModelOrders,
    SingularFilterError,
    apply_polynomial,
    generalized_inverse_filter,
    inverse_monic_filter,
)
from .oe_predictor import Dataset, predict, prediction_and_jacobian
from .optimizers import LmConfig, OptimizerReport, arx_warm_start, lm_optimize, sk_optimize
from .scheduling_net import PolynomialBasisMap, ScaledMap, SchedulingNet

__all__ = [
    "CoefficientTrajectories",
    "Dataset",
    "DeltaContext",
    "DimensionError",
    "LmConfig",
    "ModelOrders",
    "OptimizerReport",
    "PolynomialBasisMap",
    "ScaledMap",
    "SchedulingNet",
    "SingularFilterError",
    "apply_polynomial",
    "arx_warm_start",
    "generalized_inverse_filter",
    "inverse_monic_filter",
    "lm_optimize",
    "predict",
    "prediction_and_jacobian",
    "sk_optimize",
]
