"""Command-line driver: ``nnlpv {generate-data,train,evaluate,gradcheck}``.

Exit codes: 0 success (an SK divergence is recorded, not fatal), 1 failed
gradient check, 2 configuration or input error, 3 singular inverse filter at
the initial parameters.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import persistence as io
from .benchmark import BENCHMARK_ORDERS, BenchmarkSystem, COEFFICIENT_NAMES, TrueCoefficientMap, evaluate_model
from .config import ConfigError, RunConfig, load_config
from .gradcheck import run_gradcheck
from .lpv_filter import DimensionError, ModelOrders, SingularFilterError
from .oe_predictor import predict
from .workflow import benchmark_from, orders_from, train

EXIT_OK, EXIT_GRADCHECK_FAILED, EXIT_CONFIG, EXIT_SINGULAR = 0, 1, 2, 3

log = logging.getLogger("nnlpv")


def _coefficient_names(orders: ModelOrders) -> list:
    return [f"a{i}" for i in range(orders.n_a)] + [f"b{i}" for i in range(1, orders.n_b)]


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    for key in ("seed", "out_dir", "optimizer"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"run.{key}={value}")
    if getattr(args, "dataset", None):
        overrides.append(f"data.path={args.dataset}")
    return load_config(args.config, overrides)


def _ground_truth(dataset_path):
    """``(u_clean, is_benchmark)`` from the dataset sidecar, if it names a ground-truth file."""
    meta_path = io.sidecar_path(dataset_path)
    if not meta_path.exists():
        return None, False
    meta = io.read_json(meta_path)
    truth = meta.get("ground_truth")
    u_clean = None
    if truth:
        path = Path(dataset_path).parent / truth
        if path.exists():
            u_clean = io.load_ground_truth(path)[0]
    return u_clean, meta.get("generator") == "benchmark"


def _metrics(model, data, orders, u_clean, is_benchmark) -> dict:
    use_truth = is_benchmark and orders == BENCHMARK_ORDERS and data.rho.shape[1] == 1
    return evaluate_model(model, data, u_clean, sys=BenchmarkSystem() if use_truth else None, orders=orders)


def cmd_generate_data(args) -> int:
    cfg = _config(args)
    bench = benchmark_from(cfg)
    out = io.ensure_dir(cfg["run"]["out_dir"])
    io.save_ground_truth(out / "ground_truth.csv", bench.u_clean, bench.noise)
    io.save_dataset(
        out / "dataset.csv",
        bench.dataset,
        {"generator": "benchmark", "ground_truth": "ground_truth.csv", "data": cfg.to_dict()["data"]},
    )
    print(f"N = {len(bench.dataset)}")
    print(f"var(u) = {np.var(bench.u_clean):.6g}")
    print(f"sigma_v^2 = {bench.noise_variance:.6g}")
    print(f"wrote {out / 'dataset.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    path = cfg["data"]["path"]
    if path:
        data = io.load_dataset(path)
        u_clean, is_benchmark = _ground_truth(path)
    else:
        bench = benchmark_from(cfg)
        data, u_clean, is_benchmark = bench.dataset, bench.u_clean, True
    orders = orders_from(cfg)
    out = io.ensure_dir(cfg["run"]["out_dir"])

    result = train(cfg, data)
    results = {
        "schema_version": io.RESULTS_SCHEMA_VERSION,
        "command": "train",
        "config": cfg.to_dict(),
        "warm_start": result.warm_start.to_dict() if result.warm_start else None,
        "optimizer": result.report.to_dict(),
    }
    start_failed = result.report.termination == "singular_filter" and result.report.iterations == 0
    if not start_failed:
        results["metrics"] = _metrics(result.model, data, orders, u_clean, is_benchmark)
    io.save_model(out / "model.json", result.model, orders)
    io.write_json(out / "results.json", io.jsonable(results))
    rep = result.report
    print(f"optimizer {cfg['run']['optimizer']}: {rep.termination} after {rep.iterations} iterations")
    if rep.cost_history and rep.cost_history[-1] is not None:
        print(f"final N^-1 V = {rep.cost_history[-1] / len(data):.6g}")
    if rep.extra.get("diverged"):
        print("SK iterations diverged (recorded in results)")
    if start_failed:
        print("singular inverse filter at the initial parameters", file=sys.stderr)
        return EXIT_SINGULAR
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, orders = io.load_model(args.model)
    data = io.load_dataset(args.dataset)
    if data.rho.shape[1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} scheduling inputs, dataset has {data.rho.shape[1]}")
    u_clean, is_benchmark = _ground_truth(args.dataset)
    out = io.ensure_dir(args.out_dir)
    metrics = _metrics(model, data, orders, u_clean, is_benchmark)
    io.write_json(out / "metrics.json", io.jsonable({"schema_version": io.RESULTS_SCHEMA_VERSION, "metrics": metrics}))
    io.write_trace_csv(out / "trace.csv", data, predict(model, data, orders).u_hat)
    truth = TrueCoefficientMap() if is_benchmark and orders == BENCHMARK_ORDERS else None
    names = list(COEFFICIENT_NAMES) if orders == BENCHMARK_ORDERS else _coefficient_names(orders)
    if data.rho.shape[1] == 1:
        io.write_coefficient_grid_csv(out / "coefficients.csv", model, names, truth)
    print(f"N^-1 V = {metrics['normalized_cost']:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    g = _config(args)["gradcheck"]
    report = run_gradcheck(**g)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_GRADCHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnlpv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", type=Path, help="INI configuration file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        if run_flags:
            p.add_argument("--seed", type=int)
            p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("generate-data", help="simulate the benchmark plant and write a dataset")
    common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="warm start and optimize a coefficient map")
    common(p)
    p.add_argument("--dataset", help="dataset CSV (default: simulate the benchmark)")
    p.add_argument("--optimizer", choices=("lm", "sk", "gd"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics and plot data of a model on a dataset")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic derivatives")
    common(p, run_flags=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DimensionError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularFilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR


if __name__ == "__main__":
    sys.exit(main())
