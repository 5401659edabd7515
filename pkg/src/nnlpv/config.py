"""Run configuration: INI sections per concern, typed and validated up front.

Every key has a default; files and ``--set section.key=value`` overrides may
only name keys that exist in :data:`SCHEMA`. The effective configuration
(defaults expanded) is echoed into every results document.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Any, Callable

from .benchmark import DEFAULT_WARM_START_CUTOFF_HZ, NoiseSpec, ReferenceSpec
from .optimizers import LmConfig

_REF = ReferenceSpec()
_LM = LmConfig()


class ConfigError(ValueError):
    """Invalid, unknown or inconsistent configuration value."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(p) for p in text.split(","))


@dataclass(frozen=True)
class _Key:
    default: Any
    parse: Callable[[str], Any]
    check: Callable[[Any], bool] = lambda v: True
    hint: str = ""


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and math.isfinite(v) and v > 0


def _choice(*options):
    return _Key(options[0], str, lambda v: v in options, f"one of {', '.join(options)}")


SCHEMA: dict[str, dict[str, _Key]] = {
    "run": {
        "seed": _Key(0, int, lambda v: v >= 0, ">= 0"),
        "out_dir": _Key("out", str, bool, "non-empty"),
        "optimizer": _choice("lm", "sk", "gd"),
    },
    "data": {
        "path": _Key("", str),
        "sample_time": _Key(1e-3, float, _positive, "> 0"),
        "n_samples": _Key(_REF.n_samples, int, lambda v: v >= 100, ">= 100"),
        "amplitude": _Key(_REF.amplitude, float, math.isfinite, "finite"),
        "move_samples": _Key(_REF.move_samples, int, lambda v: v >= 8, ">= 8"),
        "dwell_samples": _Key(_REF.dwell_samples, int, lambda v: v >= 1, ">= 1"),
        "relative_std": _Key(NoiseSpec().relative_std, float, lambda v: v >= 0, ">= 0"),
        "rho_mode": _choice("linear_ramp", "reversed_ramp"),
    },
    "model": {
        "kind": _choice("mlp", "poly"),
        "n_a": _Key(5, int, lambda v: v >= 1, ">= 1"),
        "n_b": _Key(3, int, lambda v: v >= 1, ">= 1"),
        "hidden": _Key((5, 5), _int_list, lambda v: all(w >= 1 for w in v), "comma-separated widths >= 1"),
        "activation": _choice("tanh", "relu"),
        "degree": _Key(12, int, lambda v: v >= 0, ">= 0"),
        "output_scaling": _Key(True, _bool),
    },
    "warm_start": {
        "enabled": _Key(True, _bool),
        "cutoff_hz": _Key(DEFAULT_WARM_START_CUTOFF_HZ, float, _positive, "> 0"),
        "max_iters": _Key(300, int, lambda v: v >= 1, ">= 1"),
    },
    "lm": {
        "lambda_init": _Key(_LM.lambda_init, float, _positive, "> 0"),
        "mu": _Key(_LM.mu, float, lambda v: v > 1, "> 1"),
        "param_tol": _Key(_LM.param_tol, float, _positive, "> 0"),
        "max_iters": _Key(_LM.max_iters, int, lambda v: v >= 1, ">= 1"),
        "max_inner_rejections": _Key(_LM.max_inner_rejections, int, lambda v: v >= 1, ">= 1"),
        "solver": _choice("svd", "cholesky"),
    },
    "sk": {
        "outer_iters": _Key(20, int, lambda v: v >= 1, ">= 1"),
        "rel_tol": _Key(1e-6, float, _positive, "> 0"),
        "divergence_window": _Key(3, int, lambda v: v >= 1, ">= 1"),
        "inner_param_tol": _Key(1e-6, float, _positive, "> 0"),
        "inner_max_iters": _Key(100, int, lambda v: v >= 1, ">= 1"),
    },
    "gd": {
        "step_size": _Key(1e-3, float, _positive, "> 0"),
        "max_iters": _Key(500, int, lambda v: v >= 1, ">= 1"),
        "backtracking": _Key(True, _bool),
    },
    "gradcheck": {
        "n_samples": _Key(50, int, lambda v: v >= 1, ">= 1"),
        "n_a": _Key(3, int, lambda v: v >= 1, ">= 1"),
        "n_b": _Key(2, int, lambda v: v >= 1, ">= 1"),
        "hidden": _Key((3, 3), _int_list, lambda v: all(w >= 1 for w in v), "comma-separated widths >= 1"),
        "seeds": _Key(5, int, lambda v: v >= 1, ">= 1"),
        "sample_time": _Key(1.0, float, _positive, "> 0"),
        "fd_step": _Key(1e-6, float, _positive, "> 0"),
        "tolerance": _Key(1e-6, float, _positive, "> 0"),
    },
}


class RunConfig:
    """Validated configuration; read values as ``cfg["section"]["key"]``."""

    def __init__(self, values: dict):
        self._values = values

    def __getitem__(self, section: str) -> dict:
        return self._values[section]

    def to_dict(self) -> dict:
        """Plain JSON-compatible copy (tuples become lists)."""
        return {
            sec: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
            for sec, keys in self._values.items()
        }


def _set(values: dict, section: str, key: str, text: str, origin: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key {section}.{key}")
    spec = SCHEMA[section][key]
    try:
        value = spec.parse(text)
    except ValueError as exc:
        raise ConfigError(f"{origin}: {section}.{key} = {text!r}: {exc}") from None
    if not spec.check(value):
        raise ConfigError(f"{origin}: {section}.{key} = {text!r} must be {spec.hint}")
    values[section][key] = value


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the INI file at ``path``, then ``section.key=value`` overrides."""
    values = {sec: {k: spec.default for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            for key, text in parser.items(section):
                _set(values, section, key, text, str(path))
    for item in overrides:
        name, sep, text = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        _set(values, section, key, text.strip(), "override")
    return RunConfig(values)
