"""Bellman Hamiltonian, discounted stationary solver and the parabolic solver.

Discretization: for every control ``a`` the linear operator

    G^a v = -L^a v - b^a . D_up v

is assembled at grid nodes, with ``L^a`` the monotone Lévy stencil and
``D_up`` the upwind gradient. The compensator ``-m1 . g`` of the Lévy
operator uses the same upwind gradient as the drift, so it is folded into an
effective drift ``b^a - m1^a``. Each ``G^a`` has a nonnegative diagonal,
nonpositive off-diagonal entries and zero row sums.

The stationary problem ``delta v + max_a (G^a v - f^a) = 0`` is solved by
Howard's policy iteration (default) or by the explicit pseudo-time iteration;
the parabolic problem ``u_t + max_a (G^a u - f^a) = 0`` by explicit Euler
under the monotonicity CFL bound.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .families import TrigPoly, eval_slow_fast
from .grid import GridFunction, GridMismatchError, TorusGrid, lipschitz_seminorm, one_sided_differences
from .kernels import LevyKernel
from .nonlocal_ops import LevyStencil, apply_levy, levy_stencil, unit_stencil


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget."""


class CFLError(ValueError):
    """The requested time step violates the monotonicity bound."""


class BlowUpError(RuntimeError):
    """A solution left the a priori sup-norm barrier."""


@dataclass(frozen=True)
class ProblemData:
    """Controls, drifts ``b^a(x, xi)``, costs ``f^a(x, xi)`` and the kernel family.

    Drift components and costs are trigonometric polynomials in ``(x, xi)``,
    so they are 1-periodic in both variables.
    """

    kernel: LevyKernel
    drift: tuple[tuple[TrigPoly, ...], ...]
    cost: tuple[TrigPoly, ...]
    slow_grid: TorusGrid
    fast_grid: TorusGrid
    alpha: float = 1.0
    beta: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        m = len(self.cost)
        if m < 1:
            raise ValueError("control list must be nonempty")
        if len(self.drift) != m or self.kernel.controls != m:
            raise ValueError("drift, cost and kernel must have one entry per control")
        d = self.dim
        if self.slow_grid.dim != d or self.fast_grid.dim != d:
            raise GridMismatchError("grid dimensions must match the kernel")
        for b in self.drift:
            if len(b) != d:
                raise ValueError("each drift needs one component per dimension")
        for p in list(self.cost) + [c for b in self.drift for c in b]:
            if p.nvars != 2 * d:
                raise ValueError("drift and cost polynomials must have 2*dim variables")

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def controls(self) -> int:
        return len(self.cost)

    def drift_at(self, a: int, x, xi) -> np.ndarray:
        """``b^a(x, xi)`` with trailing vector axis."""
        return np.stack([eval_slow_fast(c, x, xi) for c in self.drift[a]], axis=-1)

    def cost_at(self, a: int, x, xi) -> np.ndarray:
        return eval_slow_fast(self.cost[a], x, xi)

    @property
    def B(self) -> float:
        """``sup_a ||b^a||_inf`` (analytic bound of the polynomials)."""
        return max(math.sqrt(sum(c.sup_bound() ** 2 for c in b)) for b in self.drift)

    @property
    def M(self) -> float:
        """``sup_a ||f^a||_inf`` (analytic bound)."""
        return max(c.sup_bound() for c in self.cost)

    @property
    def C_f(self) -> float:
        return max(c.lipschitz() for c in self.cost)

    @property
    def C_b(self) -> float:
        return max(sum(c.lipschitz() for c in b) for b in self.drift)

    @property
    def xi_independent(self) -> bool:
        fast = slice(self.dim, 2 * self.dim)
        polys = list(self.cost) + [c for b in self.drift for c in b]
        return self.kernel.xi_independent and not any(p.depends_on(fast) for p in polys)

    def with_cost_scale(self, s: float) -> "ProblemData":
        return replace(self, cost=tuple(c.scaled(s) for c in self.cost))

    def with_cost_shift(self, c: float) -> "ProblemData":
        return replace(self, cost=tuple(p.shifted(c) for p in self.cost))

    def with_kernel(self, kernel: LevyKernel) -> "ProblemData":
        return replace(self, kernel=kernel)

    def with_grids(self, slow_n: int | None = None, fast_n: int | None = None) -> "ProblemData":
        return replace(
            self,
            slow_grid=TorusGrid(self.dim, slow_n or self.slow_grid.n),
            fast_grid=TorusGrid(self.dim, fast_n or self.fast_grid.n),
        )


# --------------------------------------------------------------------------
# discrete operators


@dataclass
class ControlOperator:
    """``G v = -L v - drift . D_up v`` and its source for one control.

    The nonlocal part is either ``factors * (stencil correlate v)`` or a
    dense matrix. ``drift`` already contains the compensator.
    """

    grid: TorusGrid
    drift: np.ndarray
    source: np.ndarray
    factors: np.ndarray | None = None
    stencil: LevyStencil | None = None
    dense: np.ndarray | None = None

    def __post_init__(self):
        shape = self.grid.shape
        self.drift = np.asarray(self.drift, dtype=float).reshape((self.grid.dim,) + shape)
        self.source = np.asarray(self.source, dtype=float).reshape(shape)
        if self.stencil is not None and self.factors is None:
            self.factors = np.ones(shape)
        if (self.stencil is None) == (self.dense is None):
            if self.stencil is None and self.dense is None:
                self.dense = np.zeros((self.grid.size, self.grid.size))
            else:
                raise ValueError("give either a stencil or a dense matrix")
        if not np.all(np.isfinite(self.source)) or not np.all(np.isfinite(self.drift)):
            raise ValueError("non-finite drift or source")

    def nonlocal_apply(self, v: np.ndarray) -> np.ndarray:
        if self.stencil is not None:
            return self.factors * self.stencil.correlate(v)
        return (self.dense @ v.ravel()).reshape(self.grid.shape)

    def transport(self, v: np.ndarray) -> np.ndarray:
        """``-drift . D_up v`` with the monotone one-sided choice."""
        fwd, bwd = one_sided_differences(v, self.grid.h)
        b = self.drift
        return -np.sum(np.where(b > 0, b * fwd, np.where(b < 0, b * bwd, 0.0)), axis=0)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return -self.nonlocal_apply(v) + self.transport(v)

    def diagonal(self) -> np.ndarray:
        if self.stencil is not None:
            nl = -self.factors * self.stencil.coef.flat[0]
        else:
            nl = -np.diag(self.dense).reshape(self.grid.shape)
        return nl + np.abs(self.drift).sum(axis=0) / self.grid.h

    def matrix(self) -> np.ndarray:
        """Dense ``G`` (row-major node order)."""
        N, d, h = self.grid.size, self.grid.dim, self.grid.h
        if self.stencil is not None:
            A = self.factors.reshape(-1, 1) * self.stencil.matrix()
        else:
            A = self.dense
        G = -A.copy()
        idx = np.arange(N).reshape(self.grid.shape)
        rows = np.arange(N)
        for ax in range(d):
            b = self.drift[ax].ravel()
            plus = np.roll(idx, -1, axis=ax).ravel()
            minus = np.roll(idx, 1, axis=ax).ravel()
            bp, bm = np.maximum(b, 0) / h, np.maximum(-b, 0) / h
            G[rows, rows] += bp + bm
            np.add.at(G, (rows, plus), -bp)
            np.add.at(G, (rows, minus), -bm)
        return G


@dataclass
class DiscreteBellman:
    """``max_a (G^a v - f^a)`` on one grid."""

    grid: TorusGrid
    ops: list[ControlOperator]

    def __post_init__(self):
        if not self.ops:
            raise ValueError("need at least one control")
        for op in self.ops:
            if op.grid != self.grid:
                raise GridMismatchError("control operators on different grids")

    def control_values(self, v: np.ndarray) -> np.ndarray:
        return np.stack([op.apply(v) - op.source for op in self.ops])

    def hamiltonian(self, v: np.ndarray) -> np.ndarray:
        return self.control_values(v).max(axis=0)

    def max_diagonal(self) -> float:
        return float(max(op.diagonal().max() for op in self.ops))

    def source_sup(self) -> float:
        return float(max(np.abs(op.source).max() for op in self.ops))

    def matrices(self) -> list[np.ndarray]:
        return [op.matrix() for op in self.ops]


# --------------------------------------------------------------------------
# pointwise Hamiltonian


def hamiltonian(data: ProblemData, x, xi, p, u: GridFunction, grad_used) -> float:
    """``max_a {-L^a(xi) u(x) - b^a(x, xi) . p - f^a(x, xi)}``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    vals = []
    for a in range(data.controls):
        lev = apply_levy(data.kernel, a, xi, u, x, grad_used)
        vals.append(-lev - float(data.drift_at(a, x, xi) @ p) - float(data.cost_at(a, x, xi)))
    return max(vals)


def fast_variable(grid: TorusGrid, eps: float) -> np.ndarray:
    """``xi = x / eps`` reduced to the unit torus at every node, shape ``(*shape, dim)``."""
    return np.mod(grid.nodes() / eps, 1.0)


def check_commensurate(eps: float, n: int) -> int:
    """``eps = 1/k`` with ``k`` dividing ``n``; returns ``k``."""
    k = round(1.0 / eps)
    if k < 1 or abs(k * eps - 1.0) > 1e-12 or n % k:
        raise ValueError(f"eps={eps} must be 1/k with k dividing n={n}")
    return k


def bellman_operator(data: ProblemData, grid: TorusGrid, eps: float = 1.0) -> DiscreteBellman:
    """Discrete ``max_a (G^a v - f^a)`` for ``H(x, x/eps, Dv, v)`` on ``grid``."""
    if grid.dim != data.dim:
        raise GridMismatchError("grid dimension differs from the data")
    x = grid.nodes()
    xi = fast_variable(grid, eps)
    kernel = data.kernel
    ops = []
    for a in range(data.controls):
        b = np.moveaxis(data.drift_at(a, x, xi), -1, 0)
        f = data.cost_at(a, x, xi)
        if kernel.family != "matrix_anisotropic":
            st = unit_stencil(kernel, a, grid)
            fac = kernel.spatial_factor(a, xi)
            drift = b - fac[None] * st.m1.reshape((grid.dim,) + (1,) * grid.dim)
            ops.append(ControlOperator(grid, drift, f, factors=fac, stencil=st))
        else:
            ops.append(_dense_control(kernel, a, grid, xi, b, f))
    return DiscreteBellman(grid, ops)


def _dense_control(kernel, a, grid, xi, b, f) -> ControlOperator:
    flat_xi = xi.reshape(-1, grid.dim)
    keys = [tuple(np.round(v, 14)) for v in flat_xi]
    stencils: dict = {}
    A = np.empty((grid.size, grid.size))
    m1 = np.empty((grid.size, grid.dim))
    for i, key in enumerate(keys):
        if key not in stencils:
            stencils[key] = levy_stencil(kernel, a, np.array(key), grid)
        st = stencils[key]
        A[i] = st.row(i)
        m1[i] = st.m1
    drift = b - np.moveaxis(m1.reshape(grid.shape + (grid.dim,)), -1, 0)
    return ControlOperator(grid, drift, f, dense=A)


# --------------------------------------------------------------------------
# stationary solver


@dataclass
class StationaryResult:
    psi: GridFunction
    residual: float
    iterations: int
    method: str
    delta: float
    policy: np.ndarray
    bound: float

    def report(self) -> dict:
        return {
            "delta": self.delta,
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "sup_norm": self.psi.sup_norm(),
            "bound_M_over_delta": self.bound,
        }


def solve_stationary_discounted(
    problem: DiscreteBellman,
    delta: float,
    tol: float = 1e-7,
    max_iters: int = 200_000,
    method: str = "howard",
    init: np.ndarray | None = None,
    matrices: list[np.ndarray] | None = None,
) -> StationaryResult:
    """Solve ``delta v + max_a (G^a v - f^a) = 0``.

    ``method="howard"`` runs policy iteration with dense solves of
    ``(delta I + G^pi) v = f^pi``; ``method="explicit"`` the monotone
    pseudo-time iteration ``v <- v - tau * residual(v)``. ``init`` only seeds
    the initial policy (Howard) or iterate (explicit).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    grid = problem.grid
    shape = grid.shape
    v0 = np.zeros(shape) if init is None else np.asarray(init, dtype=float).reshape(shape)
    bound = problem.source_sup() / delta
    if method == "howard":
        v, it, pol = _howard(problem, delta, v0, tol, matrices)
    elif method == "explicit":
        v, it, pol = _explicit(problem, delta, v0, tol, max_iters)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.abs(delta * v + problem.hamiltonian(v)).max())
    # evaluating the residual loses about eps ||G|| ||v|| to roundoff
    floor = 8 * np.finfo(float).eps * (delta + 2 * problem.max_diagonal()) * float(np.abs(v).max())
    if res > max(tol, floor):
        raise ConvergenceError(f"stationary residual {res:.3e} above tol {tol:.1e} after {it} iterations")
    if np.abs(v).max() > bound * (1 + 1e-9) + tol / delta:
        raise AssertionError("discounted solution exceeds the M/delta bound")
    return StationaryResult(GridFunction(grid, v), res, it, method, delta, pol, bound)


def _howard(problem: DiscreteBellman, delta, v0, tol, matrices, max_policy_iters: int = 500):
    N = problem.grid.size
    Gs = matrices if matrices is not None else problem.matrices()
    fs = np.stack([op.source.ravel() for op in problem.ops])
    eye = delta * np.eye(N)
    rows = np.arange(N)

    def values(v):
        return np.stack([G @ v for G in Gs]) - fs

    v = v0.ravel().copy()
    pol = np.argmax(values(v), axis=0)
    for it in range(1, max_policy_iters + 1):
        A = eye + np.stack(Gs)[pol, rows]
        b = fs[pol, rows]
        lu = lu_factor(A)
        v = lu_solve(lu, b)
        # one refinement step; small discounts make the system ill-conditioned
        v = v + lu_solve(lu, b - A @ v)
        vals = values(v)
        best = vals.max(axis=0)
        current = vals[pol, rows]
        # switch only on strict improvement, which makes the iteration terminate;
        # the residual of the final iterate equals the largest skipped gain
        scale = max(1e-12 * (1.0 + np.abs(vals).max()), 0.1 * tol)
        improve = best > current + scale
        if not improve.any():
            return v.reshape(problem.grid.shape), it, pol.reshape(problem.grid.shape)
        pol = np.where(improve, np.argmax(vals, axis=0), pol)
    raise ConvergenceError("policy iteration did not stabilise")


def _explicit(problem: DiscreteBellman, delta, v0, tol, max_iters):
    tau = 1.0 / (delta + problem.max_diagonal())
    v = v0.copy()
    for it in range(1, max_iters + 1):
        r = delta * v + problem.hamiltonian(v)
        if it % 50 == 0 or it == 1:
            if np.abs(r).max() < tol:
                break
        v = v - tau * r
    else:
        raise ConvergenceError(f"explicit iteration did not reach tol {tol:.1e} in {max_iters} steps")
    pol = np.argmax(problem.control_values(v), axis=0)
    return v, it, pol


# --------------------------------------------------------------------------
# parabolic solver


@dataclass
class ParabolicSolution:
    tau: float
    times: list[float]
    snapshots: list[GridFunction]
    cfl: dict
    sup_trace: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.snapshots):
            raise ValueError("one snapshot per stored time expected")

    def at(self, t: float) -> GridFunction:
        for s, u in zip(self.times, self.snapshots):
            if abs(s - t) < 1e-12:
                return u
        raise KeyError(f"no snapshot at t={t}")

    def export(self, directory: str, prefix: str = "u") -> dict:
        os.makedirs(directory, exist_ok=True)
        files = []
        for k, (t, u) in enumerate(zip(self.times, self.snapshots)):
            name = f"{prefix}_{k:03d}.csv"
            with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(u.to_csv())
            files.append({"file": name, "time": t})
        manifest = {
            "tau": self.tau,
            "times": self.times,
            "cfl": self.cfl,
            "sup_norm_trace": self.sup_trace,
            "snapshots": files,
            "slow_domain": "periodic torus (data assumed 1-periodic in x)",
            **self.meta,
        }
        with open(os.path.join(directory, f"{prefix}_manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2)
        return manifest


def time_grid(T: float, tau_max: float, snapshot_times: Sequence[float], tau: float | None = None) -> tuple[float, int, list[int]]:
    """Step size, step count and snapshot step indices hitting every requested time."""
    if T <= 0:
        raise ValueError("T must be positive")
    fracs = [t / T for t in snapshot_times]
    if any(not 0 <= f <= 1 + 1e-12 for f in fracs):
        raise ValueError("snapshot times must lie in [0, T]")
    if tau is not None and tau > tau_max * (1 + 1e-12):
        raise CFLError(f"tau={tau:.3e} exceeds the monotonicity bound {tau_max:.3e}")
    target = tau if tau is not None else tau_max
    steps = max(1, math.ceil(T / target - 1e-9))
    # smallest multiple of the snapshot denominators not below steps
    denoms = [_denominator(f) for f in fracs]
    mult = math.lcm(*denoms) if denoms else 1
    steps = mult * math.ceil(steps / mult)
    idx = [round(f * steps) for f in fracs]
    return T / steps, steps, idx


def _denominator(f: float, max_den: int = 64) -> int:
    from fractions import Fraction

    fr = Fraction(f).limit_denominator(max_den)
    if abs(float(fr) - f) > 1e-12:
        raise ValueError(f"snapshot fraction {f} is not a simple fraction of T")
    return fr.denominator


def explicit_euler(
    problem: DiscreteBellman,
    u0: np.ndarray,
    T: float,
    snapshot_times: Sequence[float],
    tau: float | None = None,
    barrier: tuple[float, float] | None = None,
    meta: dict | None = None,
) -> ParabolicSolution:
    """``u^{k+1} = u^k - tau max_a (G^a u^k - f^a)`` with snapshots."""
    grid = problem.grid
    diag = problem.max_diagonal()
    tau_max = 1.0 / diag if diag > 0 else T
    tau, steps, idx = time_grid(T, tau_max, snapshot_times, tau)
    u = np.asarray(u0, dtype=float).reshape(grid.shape).copy()
    u0_sup = float(np.abs(u).max())
    M = barrier[1] if barrier else problem.source_sup()
    want = {k: i for i, k in enumerate(idx)}
    snaps: list = [None] * len(idx)
    trace = []
    for k in range(steps + 1):
        if k in want:
            for i, kk in enumerate(idx):
                if kk == k:
                    snaps[i] = GridFunction(grid, u)
        if k == steps:
            break
        u = u - tau * problem.hamiltonian(u)
        s = float(np.abs(u).max())
        if (k + 1) % max(1, steps // 64) == 0:
            trace.append(s)
        if not math.isfinite(s) or s > u0_sup + M * (k + 1) * tau * (1 + 1e-9) + 1e-9:
            raise BlowUpError(f"sup norm {s:.4g} above the barrier at step {k + 1}")
    cfl = {"tau": tau, "tau_max": tau_max, "max_diagonal": diag, "cfl_number": tau * diag, "steps": steps}
    return ParabolicSolution(tau, [T * i / steps for i in idx], snaps, cfl, trace, meta or {})


def eps_grid(data: ProblemData, eps: float, points_per_cell: int | None = None) -> TorusGrid:
    """Grid for the oscillatory problem: at least ``points_per_cell`` nodes per period ``eps``."""
    n = data.slow_grid.n
    check_commensurate(eps, n)
    ppc = points_per_cell if points_per_cell is not None else data.fast_grid.n
    return TorusGrid(data.dim, max(n, int(round(ppc / eps))))


def solve_parabolic(
    data: ProblemData,
    u0: GridFunction,
    T: float,
    eps: float = 1.0,
    tau: float | None = None,
    snapshot_times: Sequence[float] | None = None,
    grid: TorusGrid | None = None,
    points_per_cell: int | None = None,
) -> ParabolicSolution:
    """Explicit Euler for ``u_t + H(x, x/eps, Du, u) = 0``, ``u(., 0) = u0``.

    ``u0`` is sampled onto the solve grid, which by default resolves every
    period ``eps`` with ``points_per_cell`` nodes (``eps = 1`` uses the slow
    grid).
    """
    if grid is None:
        grid = data.slow_grid if eps == 1.0 else eps_grid(data, eps, points_per_cell)
    elif eps != 1.0:
        check_commensurate(eps, grid.n)
    snapshot_times = list(snapshot_times) if snapshot_times is not None else [T]
    problem = bellman_operator(data, grid, eps)
    if u0.grid == grid:
        v0 = u0.values
    else:
        from .grid import interpolate

        v0 = interpolate(u0.values, grid.nodes())
    sol = explicit_euler(
        problem, v0, T, snapshot_times, tau, barrier=(float(np.abs(v0).max()), data.M),
        meta={"eps": eps, "grid_n": grid.n},
    )
    return sol


# --------------------------------------------------------------------------
# Lipschitz probe


def stationary_unscaled(data: ProblemData, n: int, delta: float = 1.0, tol: float = 1e-9) -> StationaryResult:
    """``delta u + H(x, x, Du, u) = 0`` on a grid of ``n`` points per axis."""
    grid = TorusGrid(data.dim, n)
    return solve_stationary_discounted(bellman_operator(data, grid, 1.0), delta, tol=tol)


def lipschitz_scaling_probe(data: ProblemData, scales: Sequence[float], n: int = 256, delta: float = 1.0) -> list[dict]:
    """Lipschitz seminorm of the stationary solution with ``f`` replaced by ``s f``."""
    rows = []
    for s in scales:
        if s < 1:
            raise ValueError("scales must be >= 1")
        res = stationary_unscaled(data.with_cost_scale(s), n, delta)
        rows.append({"s": float(s), "lip": lipschitz_seminorm(res.psi), "n": n, "residual": res.residual})
    base = rows[0]["lip"] if rows else 1.0
    for r in rows:
        r["ratio"] = r["lip"] / base if base > 0 else float("nan")
    return rows
