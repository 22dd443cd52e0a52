"""Experiment plans from sectioned ``key = value`` files.

Example::

    [experiment]
    problem = G1
    field = F1
    d = 2
    estimators = MIQMC-TD, MLMC
    eps = 4e-3, 2e-3, 1e-3
    repetitions = 5

    [estimator]
    shifts = 16

Keys before the first section header belong to ``[experiment]``. Lines
starting with ``#`` or ``;`` are comments. Unknown sections or keys are
errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .estimator import ESTIMATORS, RunConfig
from .field import FIELD_PRESETS, MaternParams

__all__ = ["ConfigError", "ExperimentPlan", "parse_config", "parse_config_text"]


class ConfigError(ValueError):
    pass


def _float_list(text):
    return [float(x) for x in text.replace(",", " ").split()]


def _int_tuple(text):
    vals = [int(x) for x in text.replace(",", " ").split()]
    return vals[0] if len(vals) == 1 else tuple(vals)


def _choice(*options) -> Callable:
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _estimators(text):
    names = [x.strip() for x in text.split(",") if x.strip()]
    for n in names:
        if n not in ESTIMATORS:
            raise ValueError(f"unknown estimator {n!r}")
    if not names:
        raise ValueError("no estimators given")
    return names


# section -> key -> parser
SCHEMA: dict[str, dict[str, Callable]] = {
    "experiment": {
        "problem": _choice("G1", "G2"),
        "field": str,
        "d": int,
        "estimators": _estimators,
        "eps": _float_list,
        "repetitions": int,
        "seed": int,
        "out": str,
    },
    "field": {
        "corr_len": float,
        "variance": float,
        "smoothness": float,
        "n_quad": int,
        "kl_tol": float,
    },
    "grid": {"m0": _int_tuple, "M": _int_tuple},
    "estimator": {
        "warmup": int,
        "qmc_warmup": int,
        "shifts": int,
        "L_max": int,
        "eta_max": float,
        "work": _choice("model", "wall"),
        "weights": lambda t: tuple(_float_list(t)),
        "workers": int,
    },
    "solver": {"tol": float, "preconditioner": _choice("mg", "sgs", "none", "direct")},
}

REQUIRED = [("experiment", "problem"), ("experiment", "eps")]


@dataclass
class ExperimentPlan:
    problem: str
    field: str | MaternParams
    eps: list
    d: int = 3
    estimators: list = field(default_factory=lambda: ["MIQMC-TD"])
    repetitions: int = 5
    seed: int = 0
    out: str = "results"
    run_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps or any(e <= 0 for e in self.eps):
            raise ConfigError("eps values must be positive")
        if any(a <= b for a, b in zip(self.eps, self.eps[1:])):
            raise ConfigError("eps list must be strictly decreasing")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.d not in (1, 2, 3):
            raise ConfigError("d must be 1, 2 or 3")

    @property
    def matern(self) -> MaternParams:
        return FIELD_PRESETS[self.field] if isinstance(self.field, str) else self.field

    def run_seed(self, i_eps: int, rep: int) -> int:
        ss = np.random.SeedSequence(self.seed, spawn_key=(i_eps, rep))
        return int(ss.generate_state(1)[0])

    def config(self, kind: str, eps: float, seed: int) -> RunConfig:
        return RunConfig(eps=eps, kind=kind, seed=seed, field=self.field, d=self.d, qoi=self.problem,
                         **self.run_options)

    def entries(self):
        """``(estimator, i_eps, eps, rep, seed)`` in output order."""
        for kind in self.estimators:
            for i, eps in enumerate(self.eps):
                for rep in range(self.repetitions):
                    yield kind, i, eps, rep, self.run_seed(i, rep)


def _read(lines: Iterable[str]) -> dict:
    values: dict = {}
    section = "experiment"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, text = (x.strip() for x in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        try:
            values[(section, key)] = SCHEMA[section][key](text)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: invalid value for {key!r}: {exc}") from None
    return values


def parse_config_text(text: str) -> ExperimentPlan:
    values = _read(text.splitlines())
    for sec, key in REQUIRED:
        if (sec, key) not in values:
            raise ConfigError(f"missing required key {key!r} in [{sec}]")
    get = lambda sec, key, default=None: values.get((sec, key), default)  # noqa: E731

    name = get("experiment", "field")
    custom = [k for k in ("corr_len", "variance", "smoothness") if ("field", k) in values]
    if custom:
        if name not in (None, "custom"):
            raise ConfigError(f"field = {name} conflicts with custom [field] parameters")
        if ("field", "corr_len") not in values:
            raise ConfigError("missing required key 'corr_len' in [field]")
        try:
            fld = MaternParams(get("field", "corr_len"), get("field", "variance", 1.0),
                               get("field", "smoothness", 0.5))
        except ValueError as exc:
            raise ConfigError(f"invalid field parameters: {exc}") from None
    elif name is None:
        raise ConfigError("missing required key 'field' in [experiment]")
    elif name not in FIELD_PRESETS:
        raise ConfigError(f"unknown field {name!r}; use one of {sorted(FIELD_PRESETS)} or [field] parameters")
    else:
        fld = name

    opts = {}
    rename = {("field", "n_quad"): "n_quad", ("field", "kl_tol"): "kl_tol", ("grid", "m0"): "m0",
              ("grid", "M"): "M", ("solver", "tol"): "solver_tol",
              ("solver", "preconditioner"): "preconditioner"}
    for (sec, key), v in values.items():
        if sec == "estimator":
            opts[key] = v
        elif (sec, key) in rename:
            opts[rename[(sec, key)]] = v
    plan = ExperimentPlan(
        problem=get("experiment", "problem"), field=fld, eps=get("experiment", "eps"),
        d=get("experiment", "d", 3), estimators=get("experiment", "estimators", ["MIQMC-TD"]),
        repetitions=get("experiment", "repetitions", 5), seed=get("experiment", "seed", 0),
        out=get("experiment", "out", "results"), run_options=opts)
    # surface RunConfig validation errors at parse time
    try:
        plan.config(plan.estimators[0], plan.eps[0], plan.seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return plan


def parse_config(path) -> ExperimentPlan:
    with open(path) as fh:
        return parse_config_text(fh.read())
