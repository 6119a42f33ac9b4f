"""Command-line interface: ``levy-homog <command> --config cfg.json [--out DIR]``.

Exit codes: 0 success, 1 validation error, 2 solver non-convergence,
3 property-suite failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .bellman import BlowUpError, CFLError, ConvergenceError, bellman_operator, solve_parabolic, solve_stationary_discounted
from .cell import build_cell_problem, corrector_lipschitz_report, solve_cell
from .config import ConfigError, ExperimentConfig, as_jsonable, load_config
from .effective import (
    CellFailure,
    EffectiveCache,
    check_convexity_in_u,
    check_global_comparison,
    check_holder_in_x,
    check_lipschitz_in_p,
    effective_growth_bound,
    fit_growth_constant,
    growth_terms,
    solve_effective_parabolic,
)
from .grid import GridFunction, TorusGrid, lipschitz_seminorm
from .homog import run_convergence_study
from .kernels import (
    KernelDomainError,
    check_cone_ellipticity,
    check_holder_in_xi,
    check_levy_bound,
    check_modulus_integrability,
)

log = logging.getLogger("levy_homog")

COMMANDS = (
    "check-kernel",
    "solve-stationary",
    "solve-cell",
    "tabulate-heff",
    "solve-eps",
    "solve-eff",
    "converge",
    "properties",
)


class PropertyFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="levy-homog", description="Nonlocal HJB homogenization toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default ./out)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker pool size")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


class Run:
    """Output directory plus the manifest of written files."""

    def __init__(self, out: str, cfg: ExperimentConfig, command: str):
        self.out = out
        self.cfg = cfg
        self.command = command
        self.files: list[dict] = []
        self.t0 = time.time()
        os.makedirs(out, exist_ok=True)

    def write_text(self, name: str, text: str, kind: str) -> None:
        path = os.path.join(self.out, name)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files.append({"file": name, "kind": kind})

    def write_json(self, name: str, obj, kind: str) -> None:
        self.write_text(name, json.dumps(as_jsonable(obj), indent=2, sort_keys=True) + "\n", kind)

    def note(self, name: str, kind: str) -> None:
        self.files.append({"file": name, "kind": kind})

    def finish(self, status: str) -> None:
        manifest = {
            "command": self.command,
            "status": status,
            "config": self.cfg.raw,
            "versions": {
                "levy_homog": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_s": time.time() - self.t0,
            "slow_domain": "periodic torus (data assumed 1-periodic in x)",
            "files": self.files,
        }
        with open(os.path.join(self.out, "run_manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(as_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")


# --------------------------------------------------------------------------
# commands


def _u0_grid(cfg: ExperimentConfig, grid: TorusGrid) -> GridFunction:
    poly = cfg.u0()
    return grid.from_callable(lambda x: poly(x))


def _vec(val, dim):
    return np.atleast_1d(np.asarray(val, dtype=float)).reshape(dim)


def cmd_check_kernel(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    kernel = cfg.problem.kernel
    n = cfg.problem.fast_grid.n
    h = 1.0 / n
    reports = [check_levy_bound(kernel, n_xi=n).to_dict()]
    dirs = [np.array([1.0])] if kernel.dim == 1 else [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    if kernel.family == "half_space":
        dirs = [d for d in dirs if d[kernel.axis] != 0] or dirs
    eta = float(cfg.experiment.get("eta", 0.5))
    for rho in (h, 0.125, 0.25, 0.5, 1.0):
        for p in dirs:
            reports.append(check_cone_ellipticity(kernel, p, eta, rho, n_xi=n).to_dict())
    xi0 = np.zeros(kernel.dim)
    for shift in (0.5, 0.25, 0.125):
        for rho in (0.125, 0.5):
            reports.append(check_holder_in_xi(kernel, xi0, xi0 + shift, rho).to_dict())
    if kernel.family == "separable" and not kernel.symmetric:
        reports.append(check_modulus_integrability(kernel, n_xi=n).to_dict())
    passed = all(r["passed"] for r in reports)
    run.write_json("kernel_report.json", {"passed": passed, "reports": reports}, "kernel assumption reports")
    if not passed:
        raise PropertyFailure("kernel assumption check failed")


def cmd_solve_stationary(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    data = cfg.problem
    n = int(cfg.experiment.get("n_stationary", data.slow_grid.n))
    delta = float(cfg.solver.get("delta", 1.0))
    grid = TorusGrid(data.dim, n)
    res = solve_stationary_discounted(
        bellman_operator(data, grid, 1.0), delta, tol=cfg.tol, max_iters=int(cfg.solver.get("max_iters", 200000)),
        method=cfg.solver.get("method", "howard"),
    )
    run.write_text("stationary.csv", res.psi.to_csv(), "stationary solution")
    run.write_json("stationary.json", {**res.report(), "lipschitz": lipschitz_seminorm(res.psi), "n": n}, "stationary report")


def cmd_solve_cell(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    data = cfg.problem
    x = _vec(cfg.experiment.get("x", [0.0] * data.dim), data.dim)
    p = _vec(cfg.experiment.get("p", [0.0] * data.dim), data.dim)
    u = _u0_grid(cfg, data.slow_grid)
    cp = build_cell_problem(data, x, p, u, rho=cfg.rho)
    ev = solve_cell(cp, deltas=cfg.deltas, tol=cfg.tol)
    out = ev.to_dict()
    sigma = float(cfg.experiment.get("sigma", 0.5))
    out["lip_bound_inputs"] = corrector_lipschitz_report(ev, cp, sigma)
    out["branch"] = cp.branch
    run.write_json("cell.json", out, "cell run")
    run.write_text("corrector.csv", ev.psi.to_csv(), "corrector")


def cmd_tabulate_heff(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    import csv
    import io
    from concurrent.futures import ThreadPoolExecutor

    data = cfg.problem
    u = _u0_grid(cfg, data.slow_grid)
    nodes = data.slow_grid.flat_nodes()
    p_list = cfg.experiment.get("p_list", [0.0])
    step = int(cfg.experiment.get("x_stride", 1))
    jobs = [(i, p) for i in range(0, len(nodes), step) for p in p_list]

    def one(job):
        i, p = job
        cp = build_cell_problem(data, nodes[i], _vec(p, data.dim), u, rho=cfg.rho)
        ev = solve_cell(cp, deltas=cfg.deltas, tol=cfg.tol)
        return i, p, ev

    with ThreadPoolExecutor(max(1, threads)) as pool:
        results = list(pool.map(one, jobs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_index", "p", "lambda", "cell_iters", "lip_measured"])
    for i, p, ev in results:
        w.writerow([i, json.dumps(p), repr(float(ev.lam)), ev.iterations, repr(float(ev.lip))])
    run.write_text("heff.csv", buf.getvalue(), "effective Hamiltonian table")


def cmd_solve_eps(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    data = cfg.problem
    T = float(cfg.experiment.get("T", 0.25))
    times = [T * f for f in cfg.experiment.get("fractions", [0.25, 0.5, 1.0])]
    u0 = _u0_grid(cfg, data.slow_grid)
    for k, eps in enumerate(cfg.experiment.get("eps", [1.0])):
        sol = solve_parabolic(data, u0, T, eps=float(eps), snapshot_times=times)
        sub = f"eps_{k}"
        sol.export(os.path.join(run.out, sub))
        for s in range(len(sol.times)):
            run.note(f"{sub}/u_{s:03d}.csv", f"oscillatory snapshot eps={eps}")
        run.note(f"{sub}/u_manifest.json", f"oscillatory manifest eps={eps}")


def cmd_solve_eff(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    data = cfg.problem
    T = float(cfg.experiment.get("T", 0.25))
    times = [T * f for f in cfg.experiment.get("fractions", [0.25, 0.5, 1.0])]
    u0 = _u0_grid(cfg, data.slow_grid)
    sol = solve_effective_parabolic(data, u0, T, cache=EffectiveCache(p_quantum=0.0), snapshot_times=times, threads=threads)
    sol.export(os.path.join(run.out, "effective"))
    for s in range(len(sol.times)):
        run.note(f"effective/u_{s:03d}.csv", "effective snapshot")
    run.note("effective/u_manifest.json", "effective manifest")


def cmd_converge(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    data = cfg.problem
    T = float(cfg.experiment.get("T", 0.25))
    u0 = _u0_grid(cfg, data.slow_grid)
    eps = [float(e) for e in cfg.experiment.get("eps", [0.25, 0.125, 0.0625])]
    study = run_convergence_study(
        data, u0, T, eps, {"per_axis": int(cfg.experiment.get("per_axis", 16))}, threads=threads
    )
    study.export(run.out)
    run.note("errors.csv", "convergence errors")
    run.note("study.json", "convergence study")
    if study.partial:
        raise ConvergenceError(study.manifest.get("failure", "sub-solve failed"))


def _bump(grid: TorusGrid, x: np.ndarray, height: float) -> np.ndarray:
    """Nonnegative bump vanishing to fourth order at ``x``."""
    nodes = grid.nodes()
    q = sum((1 - np.cos(2 * np.pi * (nodes[..., i] - x[i]))) / 2 for i in range(grid.dim))
    return height * q**2


def properties_suite(cfg: ExperimentConfig, threads: int = 1) -> dict:
    data = cfg.problem
    g = data.slow_grid
    x = _vec(cfg.experiment.get("x", [0.25] * data.dim), data.dim)
    p = _vec(cfg.experiment.get("p", [0.5] * data.dim), data.dim)
    opts = {"deltas": cfg.deltas, "tol": cfg.tol, "rho": cfg.rho}
    rng = np.random.default_rng(cfg.seed)
    u = _u0_grid(cfg, g)
    nodes = g.nodes()

    def rand_profile():
        out = np.zeros(g.shape)
        for _ in range(2):
            k = rng.integers(1, 3, size=data.dim)
            out += rng.normal() * 0.4 * np.cos(2 * np.pi * (nodes @ k) + rng.uniform(0, 2 * np.pi))
        return out

    pairs = []
    for k in range(10):
        u1 = g.function(u.values + 0.3 * rand_profile())
        pairs.append((u1, g.function(u1.values + _bump(g, x, 0.05 * (k + 1)))))
    comp = check_global_comparison(data, x, p, pairs, opts)
    conv_rows = []
    for _ in range(5):
        u1, u2 = g.function(rand_profile()), g.function(rand_profile())
        conv_rows.append(check_convexity_in_u(data, x, p, u1, u2, [0.25, 0.5, 0.75], opts))
    conv = {"property": "convexity_in_u", "suites": conv_rows, "passed": all(r["passed"] for r in conv_rows)}
    p_list = [[q] * data.dim for q in cfg.experiment.get("p_list", [-2.0, -1.0, 0.0, 1.0, 2.0])]
    lip = check_lipschitz_in_p(data, x, u, p_list, opts)
    poly = cfg.u0()
    pairs_x = []
    for r in (0.25, 0.125, 0.0625):
        for x0 in (0.0, 0.375):
            a = np.full(data.dim, x0)
            b = a.copy()
            b[0] += r
            pairs_x.append((a, b))
    sigma = float(cfg.experiment.get("sigma", 0.5))
    hold = check_holder_in_x(data, p, lambda pts: poly(pts), pairs_x, sigma, opts)
    # growth estimate: calibrate C on one batch, validate on another
    def batch():
        out = []
        for _ in range(4):
            x1 = rng.uniform(0, 1, size=data.dim)
            x2 = (x1 + rng.uniform(-0.2, 0.2, size=data.dim)) % 1.0
            p1, p2 = rng.uniform(-1, 1, size=data.dim), rng.uniform(-1, 1, size=data.dim)
            u1 = g.function(u.values + 0.2 * rand_profile())
            u2 = g.function(u.values + 0.2 * rand_profile())
            out.append((x1, x2, p1, p2, u1, u2))
        return out

    calib = [growth_terms(data, *args, cfg.rho, sigma, opts) for args in batch()]
    C = fit_growth_constant(calib)
    checks = []
    for args in batch():
        lhs, rhs = effective_growth_bound(data, *args, cfg.rho, sigma, C, opts)
        checks.append({"lhs": lhs, "rhs": rhs, "passed": bool(lhs <= rhs)})
    growth = {"property": "growth_bound", "C": C, "rows": checks, "passed": all(c["passed"] for c in checks)}
    return {
        "global_comparison": comp,
        "convexity_in_u": conv,
        "lipschitz_in_p": lip,
        "holder_in_x": hold,
        "growth_bound": growth,
        "passed": all(r["passed"] for r in (comp, conv, lip, hold, growth)),
    }


def cmd_properties(cfg: ExperimentConfig, run: Run, threads: int) -> None:
    report = properties_suite(cfg, threads)
    run.write_json("properties.json", report, "property suite")
    if not report["passed"]:
        raise PropertyFailure("property suite failed")


HANDLERS = {
    "check-kernel": cmd_check_kernel,
    "solve-stationary": cmd_solve_stationary,
    "solve-cell": cmd_solve_cell,
    "tabulate-heff": cmd_tabulate_heff,
    "solve-eps": cmd_solve_eps,
    "solve-eff": cmd_solve_eff,
    "converge": cmd_converge,
    "properties": cmd_properties,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code not in (None, 0) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = os.environ.get("LEVY_HOMOG_OUT") or args.out or "./out"
    try:
        cfg = load_config(args.config)
        cfg.validate(args.command)
    except (OSError, ConfigError, KernelDomainError, ValueError) as exc:
        print(f"levy-homog: validation error: {exc}", file=sys.stderr)
        return 1
    run = Run(out, cfg, args.command)
    try:
        HANDLERS[args.command](cfg, run, args.threads)
    except PropertyFailure as exc:
        run.finish("property failure")
        print(f"levy-homog: {exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, CellFailure, BlowUpError) as exc:
        run.finish("non-convergence")
        print(f"levy-homog: solver failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, KernelDomainError, CFLError, ValueError) as exc:
        run.finish("validation error")
        print(f"levy-homog: validation error: {exc}", file=sys.stderr)
        return 1
    run.finish("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
