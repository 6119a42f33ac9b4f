"""End-to-end homogenization study and discrete comparison suite."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bellman import (
    ParabolicSolution,
    ProblemData,
    bellman_operator,
    check_commensurate,
    explicit_euler,
    solve_parabolic,
    solve_stationary_discounted,
)
from .effective import EffectiveCache, solve_effective_parabolic
from .grid import GridFunction, TorusGrid, sample_lattice, sup_norm_diff

SLACK = 0.10


@dataclass
class ConvergenceStudy:
    eps: list[float]
    times: list[float]
    errors: dict  # eps -> list of errors at ``times``
    resolutions: dict
    verdict: bool | None
    manifest: dict = field(default_factory=dict)
    partial: bool = False

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps list must be strictly decreasing")
        for errs in self.errors.values():
            if any(e < 0 for e in errs):
                raise ValueError("errors must be nonnegative")

    def max_errors(self) -> list[float]:
        return [max(self.errors[e]) for e in self.eps if e in self.errors]

    def errors_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "time", "sup_error"])
        for e in self.eps:
            for t, err in zip(self.times, self.errors.get(e, [])):
                w.writerow([repr(float(e)), repr(float(t)), repr(float(err))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "times": self.times,
            "errors": {repr(k): v for k, v in self.errors.items()},
            "resolutions": {repr(k): v for k, v in self.resolutions.items()},
            "verdict": self.verdict,
            "partial": self.partial,
            "manifest": self.manifest,
        }

    def export(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "errors.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.errors_csv())
        with open(os.path.join(directory, "study.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def monotone_verdict(errors: Sequence[float], slack: float = SLACK) -> bool | None:
    """Errors non-increasing as eps decreases, each step allowed ``slack`` relative growth."""
    if len(errors) < 2:
        return None
    return all(b <= a * (1 + slack) + 1e-12 for a, b in zip(errors, errors[1:]))


def run_convergence_study(
    data: ProblemData,
    u0: GridFunction,
    T: float,
    eps_list: Sequence[float],
    sample_spec: dict | None = None,
    threads: int = 1,
    points_per_cell: int | None = None,
    effective: ParabolicSolution | None = None,
) -> ConvergenceStudy:
    """Sup-lattice errors between the oscillatory and effective solutions.

    ``sample_spec`` may set ``per_axis`` (default 16) and ``fractions`` of
    ``T`` (default 1/4, 1/2, 1).
    """
    spec = {"per_axis": 16, "fractions": [0.25, 0.5, 1.0]}
    spec.update(sample_spec or {})
    eps_list = [float(e) for e in eps_list]
    for e in eps_list:
        check_commensurate(e, data.slow_grid.n)
    times = [T * f for f in spec["fractions"]]
    pts = sample_lattice(data.dim, spec["per_axis"])
    t0 = time.time()
    manifest = {
        "problem": data.name,
        "T": T,
        "sample_lattice_per_axis": spec["per_axis"],
        "sample_times": times,
        "slow_n": data.slow_grid.n,
        "fast_n": data.fast_grid.n,
        "slow_domain": "periodic torus (data assumed 1-periodic in x)",
        "uniform_convergence_proxy": "sup over a fixed lattice and three times",
    }
    errors: dict = {}
    resolutions: dict = {}
    try:
        ubar = effective if effective is not None else solve_effective_parabolic(
            data, u0, T, cache=EffectiveCache(p_quantum=0.0), snapshot_times=times, threads=threads
        )
        manifest["effective"] = {"tau": ubar.tau, "cfl": ubar.cfl}

        def one(e):
            return e, solve_parabolic(data, u0, T, eps=e, snapshot_times=times, points_per_cell=points_per_cell)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                sols = list(pool.map(one, eps_list))
        else:
            sols = [one(e) for e in eps_list]
        for e, sol in sols:
            errors[e] = [sup_norm_diff(sol.at(t), ubar.at(t), pts) for t in times]
            resolutions[e] = {"grid_n": sol.meta["grid_n"], "tau": sol.tau, "steps": sol.cfl["steps"]}
    except Exception as exc:
        manifest["failure"] = repr(exc)
        manifest["wall_time_s"] = time.time() - t0
        return ConvergenceStudy(eps_list, times, errors, resolutions, None, manifest, partial=True)
    manifest["wall_time_s"] = time.time() - t0
    verdict = monotone_verdict([max(errors[e]) for e in eps_list])
    return ConvergenceStudy(eps_list, times, errors, resolutions, verdict, manifest)


# --------------------------------------------------------------------------
# discrete comparison


def _random_profile(rng: np.random.Generator, grid: TorusGrid, modes: int = 3) -> np.ndarray:
    x = grid.nodes()
    out = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(1, 4, size=grid.dim)
        out += rng.normal() * 0.3 * np.cos(2 * np.pi * (x @ k) + rng.uniform(0, 2 * np.pi))
    return out


def discrete_comparison_suite(
    data: ProblemData,
    trials: int = 10,
    seed: int = 0,
    T: float = 0.05,
    eps: float = 0.25,
    delta: float = 0.5,
    atol: float = 1e-8,
    threads: int = 1,
) -> dict:
    """Order preservation by the oscillatory, effective and stationary schemes."""
    if trials < 10:
        raise ValueError("need at least 10 trials")
    rng = np.random.default_rng(seed)
    grid = data.slow_grid
    eps_problem = bellman_operator(data, grid, eps)
    stat_problem = bellman_operator(data, data.fast_grid, 1.0)
    rows = []
    for t in range(trials):
        u0 = _random_profile(rng, grid)
        gap0 = np.abs(_random_profile(rng, grid)) * rng.uniform(0.1, 1.0)
        v0 = u0 + gap0
        su = explicit_euler(eps_problem, u0, T, [T])
        sv = explicit_euler(eps_problem, v0, T, [T])
        osc = float((su.snapshots[-1].values - sv.snapshots[-1].values).max())
        eu = solve_effective_parabolic(data, GridFunction(grid, u0), T, snapshot_times=[T], threads=threads)
        ev = solve_effective_parabolic(data, GridFunction(grid, v0), T, snapshot_times=[T], threads=threads)
        eff = float((eu.snapshots[-1].values - ev.snapshots[-1].values).max())
        shift = rng.uniform(0.0, 1.0, size=data.fast_grid.shape)
        base = stat_problem
        raised = type(base)(base.grid, [type(op)(op.grid, op.drift, op.source + shift, factors=op.factors, stencil=op.stencil, dense=op.dense) for op in base.ops])
        mats = base.matrices()
        psi_f = solve_stationary_discounted(base, delta, tol=1e-10, matrices=mats).psi.values
        psi_g = solve_stationary_discounted(raised, delta, tol=1e-10, matrices=mats).psi.values
        # raising the source raises the discounted solution
        stat = float((psi_f - psi_g).max())
        rows.append(
            {
                "trial": t,
                "oscillatory_violation": osc,
                "effective_violation": eff,
                "stationary_violation": stat,
                "passed": bool(osc <= atol and eff <= atol and stat <= atol),
            }
        )
    return {"property": "discrete_comparison", "trials": rows, "passed": all(r["passed"] for r in rows)}
