"""Experiment configuration: JSON parsing, validation and reference instances."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Any

from .bellman import ProblemData, check_commensurate
from .families import TrigPoly
from .grid import TorusGrid
from .kernels import kernel_from_spec

log = logging.getLogger(__name__)

CELL_COMMANDS = {"solve-cell", "tabulate-heff", "solve-eff", "converge", "properties"}


class ConfigError(ValueError):
    """The configuration is malformed or violates a hypothesis."""


def _sin(amp, freq):
    return {"amp": amp, "freq": freq, "kind": "sin"}


def _cos(amp, freq):
    return {"amp": amp, "freq": freq}


def reference_problem_spec(b_amp: float = 0.5, slow_n: int = 64, fast_n: int = 128) -> dict:
    """Two-control separable instance in 1D.

    ``k^a(xi) in {2 + sin 2 pi xi, 2 + cos 2 pi xi}`` times ``|z|^{-2}``,
    ``b^a = +- b_amp cos 2 pi (x + xi)``,
    ``f^1 = sin 2 pi x (1 + sin(2 pi xi) / 2)``,
    ``f^2 = cos 2 pi x (1 + cos(2 pi xi) / 2)``.
    """
    return {
        "dim": 1,
        "slow_n": slow_n,
        "fast_n": fast_n,
        "kernel": {
            "family": "separable",
            "controls": 2,
            "params": {"spatial": [{"const": 2.0, "terms": [_sin(1.0, 1)]}, {"const": 2.0, "terms": [_cos(1.0, 1)]}]},
            "symmetric": True,
            "C_K": 16.0,
            "C_K_lower": 1.0,
            "gamma": 1.0,
        },
        "controls": [
            {
                "drift": [{"terms": [_cos(b_amp, [1, 1])]}],
                # sin(x)(1 + sin(xi)/2) = sin x + (cos(x - xi) - cos(x + xi)) / 4
                "cost": {"terms": [_sin(1.0, [1, 0]), _cos(0.25, [1, -1]), _cos(-0.25, [1, 1])]},
            },
            {
                "drift": [{"terms": [_cos(-b_amp, [1, 1])]}],
                # cos(x)(1 + cos(xi)/2) = cos x + (cos(x - xi) + cos(x + xi)) / 4
                "cost": {"terms": [_cos(1.0, [1, 0]), _cos(0.25, [1, -1]), _cos(0.25, [1, 1])]},
            },
        ],
        "alpha": 1.0,
        "beta": 1.0,
    }


def reference_config(b_amp: float = 0.5) -> dict:
    return {
        "problem": reference_problem_spec(b_amp),
        "solver": {"deltas": [2.0**-k for k in range(1, 9)], "tol": 1e-7, "max_iters": 200000, "rho": 0.5},
        "experiment": {
            "T": 0.25,
            "u0": {"terms": [_sin(0.5, 1)]},
            "eps": [0.25, 0.125, 0.0625],
            "p_list": [-2.0, -1.0, 0.0, 1.0, 2.0],
            "x": [0.25],
            "p": [0.5],
            "scales": [1.0, 4.0, 16.0],
            "sigma": 0.5,
            "n_stationary": 256,
        },
        "seed": 0,
    }


def problem_from_spec(spec: dict, name: str = "config") -> ProblemData:
    try:
        d = int(spec["dim"])
        kernel = kernel_from_spec(spec["kernel"], d)
        controls = spec["controls"]
        if not controls:
            raise ConfigError("control list is empty")
        drift = tuple(tuple(TrigPoly.from_dict(c, 2 * d) for c in ctrl["drift"]) for ctrl in controls)
        cost = tuple(TrigPoly.from_dict(ctrl["cost"], 2 * d) for ctrl in controls)
        return ProblemData(
            kernel,
            drift,
            cost,
            TorusGrid(d, int(spec.get("slow_n", 64))),
            TorusGrid(d, int(spec.get("fast_n", 128))),
            float(spec.get("alpha", 1.0)),
            float(spec.get("beta", 1.0)),
            name,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem block: {exc}") from exc


def reference_problem(b_amp: float = 0.5, slow_n: int = 64, fast_n: int = 128) -> ProblemData:
    return problem_from_spec(reference_problem_spec(b_amp, slow_n, fast_n), name="reference")


@dataclass
class ExperimentConfig:
    problem: ProblemData
    solver: dict
    experiment: dict
    seed: int = 0
    raw: dict = field(default_factory=dict)

    @property
    def deltas(self) -> list[float]:
        return [float(d) for d in self.solver.get("deltas", [2.0**-k for k in range(1, 9)])]

    @property
    def tol(self) -> float:
        return float(self.solver.get("tol", 1e-7))

    @property
    def rho(self) -> float:
        return float(self.solver.get("rho", 0.5))

    def u0(self) -> TrigPoly:
        return TrigPoly.from_dict(self.experiment.get("u0", 0.0), self.problem.dim)

    def validate(self, command: str) -> None:
        gamma = self.problem.kernel.gamma
        if command in CELL_COMMANDS and not gamma > 0.5:
            raise ConfigError(f"gamma={gamma} must exceed 1/2 for cell and effective computations")
        if gamma <= 0.5:
            log.warning("gamma=%s <= 1/2: cell theory does not apply", gamma)
        for eps in self.experiment.get("eps", []):
            try:
                check_commensurate(float(eps), self.problem.slow_grid.n)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        eps = [float(e) for e in self.experiment.get("eps", [])]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps list must be strictly decreasing")


def parse_config(text: str) -> ExperimentConfig:
    """Parse JSON text; syntax errors report line and column."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict) or "problem" not in raw:
        raise ConfigError("config must be an object with a 'problem' block")
    problem = problem_from_spec(raw["problem"])
    return ExperimentConfig(
        problem, dict(raw.get("solver", {})), dict(raw.get("experiment", {})), int(raw.get("seed", 0)), copy.deepcopy(raw)
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def as_jsonable(obj: Any):
    """Recursively convert numpy scalars/arrays for ``json.dump``."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): as_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [as_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj
