"""Reading and writing datasets, model files, results documents and plot data.

File formats
------------
dataset CSV
    Header ``k,u_meas,y,rho`` (or ``rho_1..rho_P`` for vector scheduling),
    one row per sample, ``k`` counting from 1, floats with 17 significant
    digits. A JSON sidecar ``<name>.json`` records ``sample_time``.
ground-truth CSV
    Header ``k,u_clean,noise``; only produced for simulated data.
model file
    JSON object with ``format_version``, ``kind`` (``mlp``, ``poly`` or
    ``benchmark_truth``), the architecture, ``params`` in flattening order and
    the fixed ``output_scale``.
results document
    JSON object with ``schema_version``, the effective configuration, the
    optimizer reports and final metrics.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .benchmark import RHO_GRID, BenchmarkSystem, TrueCoefficientMap
from .lpv_filter import DeltaContext, DimensionError, ModelOrders
from .oe_predictor import Dataset
from .optimizers import jsonable
from .scheduling_net import PolynomialBasisMap, ScaledMap, SchedulingNet, unflatten, unscaled

MODEL_FORMAT_VERSION = 1
RESULTS_SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_rows(path: Path, header, columns) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text + "\n")


def read_json(path):
    with open(path, encoding="ascii") as fh:
        return json.load(fh)


def save_dataset(path, data: Dataset, extra_meta: dict | None = None) -> None:
    n_rho = data.rho.shape[1]
    rho_names = ["rho"] if n_rho == 1 else [f"rho_{i + 1}" for i in range(n_rho)]
    k = np.arange(1, len(data) + 1)
    _write_rows(path, ["k", "u_meas", "y"] + rho_names, [k, data.u_meas, data.y] + list(data.rho.T))
    meta = {"sample_time": data.ctx.sample_time, "n_samples": len(data), "scheduling_dim": n_rho}
    meta.update(extra_meta or {})
    write_json(sidecar_path(path), meta)


def load_dataset(path, sample_time: float | None = None) -> Dataset:
    """Read a dataset CSV; the sampling time comes from the sidecar unless given."""
    path = Path(path)
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if header[:3] != ["k", "u_meas", "y"] or len(header) < 4:
        raise ValueError(f"{path}: unexpected header {header}")
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if sample_time is None:
        meta = sidecar_path(path)
        if not meta.exists():
            raise FileNotFoundError(f"{meta} (sample_time) not found")
        sample_time = float(read_json(meta)["sample_time"])
    return Dataset(values[:, 1], values[:, 2], values[:, 3:], DeltaContext(sample_time))


def save_ground_truth(path, u_clean, noise) -> None:
    k = np.arange(1, len(u_clean) + 1)
    _write_rows(path, ["k", "u_clean", "noise"], [k, u_clean, noise])


def load_ground_truth(path):
    """Return ``(u_clean, noise)``."""
    values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return values[:, 1], values[:, 2]


def model_to_dict(coefffn, orders) -> dict:
    scale = coefffn.scale.tolist() if isinstance(coefffn, ScaledMap) else None
    base = unscaled(coefffn)
    doc = {"format_version": MODEL_FORMAT_VERSION, "orders": {"n_a": orders.n_a, "n_b": orders.n_b}}
    if isinstance(base, SchedulingNet):
        doc.update(kind="mlp", layer_sizes=list(base.layer_sizes), activation=base.activation)
    elif isinstance(base, PolynomialBasisMap):
        doc.update(kind="poly", degrees=list(base.degrees))
    elif isinstance(base, TrueCoefficientMap):
        doc.update(kind="benchmark_truth")
    else:
        raise TypeError(f"cannot serialize {type(base).__name__}")
    doc["params"] = base.params.tolist()
    doc["output_scale"] = scale
    return doc


def model_from_dict(doc: dict):
    """Inverse of :func:`model_to_dict`; returns ``(coefffn, orders)``."""
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    orders = ModelOrders(int(doc["orders"]["n_a"]), int(doc["orders"]["n_b"]))
    kind = doc.get("kind")
    params = np.asarray(doc.get("params", []), dtype=float)
    if kind == "mlp":
        model = unflatten(params, doc["layer_sizes"], doc.get("activation", "tanh"))
    elif kind == "poly":
        model = PolynomialBasisMap(tuple(doc["degrees"]), params)
    elif kind == "benchmark_truth":
        model = TrueCoefficientMap(BenchmarkSystem())
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    if model.output_dim != orders.n_coefficients:
        raise DimensionError(f"model has {model.output_dim} outputs, orders need {orders.n_coefficients}")
    if doc.get("output_scale") is not None:
        model = ScaledMap(model, doc["output_scale"])
    return model, orders


def save_model(path, coefffn, orders) -> None:
    write_json(path, model_to_dict(coefffn, orders))


def load_model(path):
    return model_from_dict(read_json(path))


def write_trace_csv(path, data: Dataset, u_hat) -> None:
    """Columns ``k,u_meas,u_hat,residual``."""
    u_hat = np.asarray(u_hat, dtype=float)
    k = np.arange(1, len(data) + 1)
    _write_rows(path, ["k", "u_meas", "u_hat", "residual"], [k, data.u_meas, u_hat, data.u_meas - u_hat])


def write_coefficient_grid_csv(path, coefffn, names, truth=None, grid=RHO_GRID) -> None:
    """Columns ``rho``, each coefficient name, then ``<name>_true`` when ``truth`` is given."""
    est = coefffn.evaluate(grid)
    header = ["rho"] + list(names)
    columns = [grid] + list(est.T)
    if truth is not None:
        header += [f"{n}_true" for n in names]
        columns += list(truth.evaluate(grid).T)
    path = Path(path)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_fmt(v) for v in row])


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
