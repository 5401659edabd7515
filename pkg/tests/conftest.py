import warnings
from dataclasses import dataclass, field

import numpy as np
import pytest

from nnlpv.benchmark import BENCHMARK_ORDERS, RHO_GRID, TrueCoefficientMap
from nnlpv.config import load_config
from nnlpv.oe_predictor import predict
from nnlpv.optimizers import LmConfig, gradient_descent_optimize, lm_optimize, sk_optimize
from nnlpv.workflow import benchmark_from, build_model, lm_config_from, train

# full record length: at N = 1600 the network fits noise through weakly excited
# coefficient directions and the reversed-ramp validation cost becomes seed-dependent
STUDY_N = 6400
SEEDS = range(5)
VALIDATION_SEED_OFFSET = 1000

_LOG_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LOG_KEY] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append ``(criterion, passed, detail)``; printed in the terminal summary."""
    return request.config.stash[_LOG_KEY]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LOG_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")


def study_config(**overrides):
    items = [f"data.n_samples={STUDY_N}"] + [f"{k}={v}" for k, v in overrides.items()]
    return load_config(None, items)


@dataclass
class SeedRun:
    seed: int
    data: object
    noise_variance: float
    validation_noise_variance: float
    train_cost: float
    validation_cost: float
    nn: object
    warm: object
    lm_report: object
    gd_report: object
    random_init_report: object
    poly_cost: float
    poly: object


@dataclass
class BenchmarkStudy:
    runs: list = field(default_factory=list)
    poly_best_case_cost: float = float("nan")
    sk_report: object = None

    @property
    def best(self) -> SeedRun:
        return min(self.runs, key=lambda r: r.train_cost / r.noise_variance)


def _normalized_cost(model, data):
    try:
        return predict(model, data, BENCHMARK_ORDERS).cost / len(data)
    except (ValueError, ArithmeticError):
        return float("inf")


def _poly_best_case(data):
    """Degree-12 basis started from its least-squares fit to the true functions, then LM."""
    truth = TrueCoefficientMap().evaluate(RHO_GRID)
    powers = np.vander(RHO_GRID, 13, increasing=True)
    theta = np.concatenate([np.linalg.lstsq(powers, truth[:, i], rcond=None)[0] for i in range(truth.shape[1])])
    cfg = study_config(**{"model.kind": "poly"})
    scaled = build_model(cfg, data, BENCHMARK_ORDERS, 0)
    model = scaled.with_params(theta / np.repeat(scaled.scale, 13))
    model, _ = lm_optimize(model, data, BENCHMARK_ORDERS, lm_config_from(cfg))
    return _normalized_cost(model, data)


def run_benchmark_study() -> BenchmarkStudy:
    """The benchmark protocol shared by the acceptance criteria (about a quarter of an hour)."""
    warnings.simplefilter("ignore", RuntimeWarning)
    cfg = study_config()
    poly_cfg = study_config(**{"model.kind": "poly"})
    orders = BENCHMARK_ORDERS
    study = BenchmarkStudy()
    for seed in SEEDS:
        bench = benchmark_from(cfg, seed=seed)
        val = benchmark_from(cfg, seed=VALIDATION_SEED_OFFSET + seed, rho_mode="reversed_ramp")
        data = bench.dataset

        result = train(cfg, data, seed=seed)
        warm_model = result.model.with_params(result.warm_start.final_params)
        _, gd_report = gradient_descent_optimize(
            warm_model, data, orders, cfg["gd"]["step_size"], cfg["lm"]["max_iters"], True, cfg["lm"]["param_tol"]
        )
        _, random_report = lm_optimize(build_model(cfg, data, orders, seed), data, orders, lm_config_from(cfg))
        poly = train(poly_cfg, data, seed=seed)

        study.runs.append(
            SeedRun(
                seed=seed,
                data=data,
                noise_variance=bench.noise_variance,
                validation_noise_variance=val.noise_variance,
                train_cost=_normalized_cost(result.model, data),
                validation_cost=_normalized_cost(result.model, val.dataset),
                nn=result.model,
                warm=result.warm_start,
                lm_report=result.report,
                gd_report=gd_report,
                random_init_report=random_report,
                poly_cost=_normalized_cost(poly.model, data),
                poly=poly.model,
            )
        )

    first = study.runs[0].data
    study.poly_best_case_cost = _poly_best_case(first)
    warm_model = study.runs[0].nn.with_params(study.runs[0].warm.final_params)
    _, study.sk_report = sk_optimize(
        warm_model, first, orders, outer_iters=6, inner=LmConfig(param_tol=1e-6, max_iters=30)
    )
    return study


@pytest.fixture(scope="session")
def benchmark_study():
    return run_benchmark_study()

