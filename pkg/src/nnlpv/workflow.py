"""Model construction and the warm-start + optimizer pipeline driven by a :class:`RunConfig`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .benchmark import BenchmarkData, BenchmarkSystem, NoiseSpec, ReferenceSpec, generate_dataset
from .config import RunConfig
from .lpv_filter import DeltaContext, ModelOrders
from .oe_predictor import Dataset
from .optimizers import (
    LmConfig,
    OptimizerReport,
    arx_warm_start,
    coefficient_scales,
    gradient_descent_optimize,
    lm_optimize,
    sk_optimize,
)
from .scheduling_net import PolynomialBasisMap, ScaledMap, SchedulingNet


def orders_from(cfg: RunConfig) -> ModelOrders:
    return ModelOrders(cfg["model"]["n_a"], cfg["model"]["n_b"])


def lm_config_from(cfg: RunConfig, **changes) -> LmConfig:
    values = dict(cfg["lm"])
    values.update(changes)
    return LmConfig(**values)


def benchmark_from(cfg: RunConfig, seed: Optional[int] = None, rho_mode: Optional[str] = None) -> BenchmarkData:
    d = cfg["data"]
    spec = ReferenceSpec(d["n_samples"], d["amplitude"], d["move_samples"], d["dwell_samples"])
    noise = NoiseSpec(d["relative_std"], cfg["run"]["seed"] if seed is None else seed)
    return generate_dataset(
        BenchmarkSystem(), spec, noise, DeltaContext(d["sample_time"]), rho_mode or d["rho_mode"]
    )


def build_model(cfg: RunConfig, data: Dataset, orders: ModelOrders, seed: int):
    """Untrained coefficient map of the configured kind, with data-derived output gains."""
    m = cfg["model"]
    n_out = orders.n_coefficients
    if m["kind"] == "mlp":
        sizes = [data.rho.shape[1], *m["hidden"], n_out]
        model = SchedulingNet.initialize(sizes, m["activation"], seed)
    else:
        if data.rho.shape[1] != 1:
            raise ValueError("the polynomial basis needs a scalar scheduling signal")
        model = PolynomialBasisMap.uniform(n_out, m["degree"])
    if m["output_scaling"]:
        model = ScaledMap(model, coefficient_scales(data, orders))
    return model


@dataclass
class TrainingResult:
    model: object
    warm_start: Optional[OptimizerReport]
    report: OptimizerReport


def train(cfg: RunConfig, data: Dataset, seed: Optional[int] = None, model0=None) -> TrainingResult:
    """Optional equation-error warm start, then the configured optimizer."""
    orders = orders_from(cfg)
    seed = cfg["run"]["seed"] if seed is None else seed
    model = build_model(cfg, data, orders, seed) if model0 is None else model0

    warm = None
    ws = cfg["warm_start"]
    if ws["enabled"]:
        model, warm = arx_warm_start(
            model, data, orders, ws["cutoff_hz"], lm_config_from(cfg, max_iters=ws["max_iters"])
        )

    optimizer = cfg["run"]["optimizer"]
    if optimizer == "lm":
        model, report = lm_optimize(model, data, orders, lm_config_from(cfg))
    elif optimizer == "gd":
        g = cfg["gd"]
        model, report = gradient_descent_optimize(
            model, data, orders, g["step_size"], g["max_iters"], g["backtracking"], cfg["lm"]["param_tol"]
        )
    else:
        s = cfg["sk"]
        inner = lm_config_from(cfg, param_tol=s["inner_param_tol"], max_iters=s["inner_max_iters"])
        model, report = sk_optimize(model, data, orders, s["outer_iters"], inner, s["rel_tol"], s["divergence_window"])
    return TrainingResult(model, warm, report)
