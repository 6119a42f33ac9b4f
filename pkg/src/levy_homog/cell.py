"""Cell problems, ergodic constants and correctors.

For a slow point ``x``, gradient ``p`` and slow profile ``u`` the cell
problem on the fast torus reads

    max_a { -I^a(xi, psi) - b~^a(xi) . D psi - f~^a(xi) } = lambda,
    f~^a(xi) = f^a(x, xi) + b^a(x, xi) . p + L^a(x, xi, u).

Symmetric kernels use the full compensated operator with ``b~ = b``; for
non-symmetric separable kernels ``k^a(xi, z) |z|^{-(d+1)}`` the operator
collapses to ``-k^a(xi, 0) (-Delta)^{1/2}`` (spectral, in raw kernel units)
and the drift picks up ``b_K``.

``lambda`` is approached by the vanishing discount ``-delta psi^delta(0)``
along a halving ladder and then pinned down by an ergodic policy iteration on
the same discrete operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import ControlOperator, ConvergenceError, DiscreteBellman, ProblemData, solve_stationary_discounted
from .grid import GridFunction, TorusGrid, interpolate, lipschitz_seminorm, second_differences
from .kernels import KernelDomainError, drift_correction
from .nonlocal_ops import (
    HALF_LAPLACIAN_CONSTANT,
    LevyStencil,
    apply_levy,
    half_laplacian_symbol,
    levy_stencil,
    unit_stencil,
)

DEFAULT_DELTAS = tuple(2.0**-k for k in range(1, 9))


@dataclass(frozen=True)
class LocalData:
    """Value, centered gradient and second differences of ``u`` at ``x``."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    hessian_sup: float
    rho: float


def local_data(u: GridFunction, x, rho: float) -> LocalData:
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    grid = u.grid
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = grid.h
    value = float(interpolate(u.values, x[None])[0])
    grad = np.empty(grid.dim)
    for i in range(grid.dim):
        e = np.zeros(grid.dim)
        e[i] = h
        grad[i] = (interpolate(u.values, (x + e)[None])[0] - interpolate(u.values, (x - e)[None])[0]) / (2 * h)
    D2 = second_differences(u.values, h)
    hess = np.array([[interpolate(D2[i, j], x[None])[0] for j in range(grid.dim)] for i in range(grid.dim)])
    # sup of the Hessian norm over nodes within rho of x (periodic distance)
    delta = np.abs(grid.nodes() - x)
    delta = np.minimum(delta % 1.0, 1.0 - delta % 1.0)
    near = np.linalg.norm(delta, axis=-1) <= rho + 1e-12
    norms = np.linalg.norm(np.moveaxis(D2.reshape(grid.dim, grid.dim, -1), -1, 0), ord=2, axis=(1, 2))
    sup = float(norms[near.ravel()].max()) if near.any() else float(np.linalg.norm(hess, 2))
    return LocalData(value, grad, hess, sup, rho)


@dataclass
class CellProblem:
    """Frozen cell data on the fast grid.

    ``f_tilde`` has shape ``(m, *fast_shape)`` and ``b_tilde`` shape
    ``(m, d, *fast_shape)``; ``operator`` holds one nonlocal stencil per
    control (factors times a circulant) with the compensator folded into
    ``drift_eff``.
    """

    data: ProblemData
    x: np.ndarray
    p: np.ndarray
    u: GridFunction | None
    local: LocalData | None
    branch: str
    f_tilde: np.ndarray
    b_tilde: np.ndarray
    factors: np.ndarray
    stencils: list
    drift_eff: np.ndarray
    b_K: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    _bellman: DiscreteBellman | None = field(default=None, repr=False)
    _matrices: list | None = field(default=None, repr=False)

    @property
    def fast_grid(self) -> TorusGrid:
        return self.data.fast_grid

    def bellman(self) -> DiscreteBellman:
        if self._bellman is None:
            g = self.fast_grid
            ops = [
                ControlOperator(g, self.drift_eff[a], self.f_tilde[a], factors=self.factors[a], stencil=self.stencils[a])
                for a in range(self.data.controls)
            ]
            self._bellman = DiscreteBellman(g, ops)
        return self._bellman

    def matrices(self) -> list[np.ndarray]:
        if self._matrices is None:
            self._matrices = self.bellman().matrices()
        return self._matrices

    def recompute_source(self, a: int, xi) -> float:
        """``f^a(x, xi) + b^a(x, xi) . p + L^a(x, xi, u)`` directly from the data."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        d = self.data
        lev = 0.0
        if self.u is not None:
            lev = apply_levy(d.kernel, a, xi, self.u, self.x, self.local.gradient)
        return float(d.cost_at(a, self.x, xi) + d.drift_at(a, self.x, xi) @ self.p + lev)


def levy_features(data: ProblemData, u: GridFunction, x, grad) -> np.ndarray | None:
    """Scalars ``l^a(x, u)`` with ``L^a(x, xi, u) = k^a(xi) l^a`` (factorized kernels)."""
    kernel = data.kernel
    if kernel.family == "matrix_anisotropic":
        return None
    from .nonlocal_ops import _unit_kernel

    return np.array(
        [apply_levy(_unit_kernel(kernel, a), 0, np.zeros(data.dim), u, x, grad) for a in range(data.controls)]
    )


def levy_table(data: ProblemData, u: GridFunction, x, grad) -> np.ndarray:
    """``L^a(x, xi, u)`` on the fast grid, shape ``(m, *fast_shape)``."""
    kernel = data.kernel
    xis = data.fast_grid.nodes()
    ell = levy_features(data, u, x, grad)
    if ell is not None:
        return np.stack([kernel.spatial_factor(a, xis) * ell[a] for a in range(data.controls)])
    flat = xis.reshape(-1, data.dim)
    out = np.array([[apply_levy(kernel, a, xi, u, x, grad) for xi in flat] for a in range(data.controls)])
    return out.reshape((data.controls,) + data.fast_grid.shape)


def resolve_branch(data: ProblemData, branch: str | None) -> str:
    k = data.kernel
    if k.family == "half_space":
        raise KernelDomainError("half-space kernels fit neither cell branch (no symmetry, no smooth factor)")
    auto = "Ks" if k.symmetric else "Kns"
    branch = branch or auto
    if branch == "Ks" and not k.symmetric:
        raise KernelDomainError("symmetric branch requested for a non-symmetric kernel")
    if branch == "Kns" and (k.family != "separable" or k.symmetric):
        raise KernelDomainError("non-symmetric branch needs a non-symmetric separable kernel")
    if branch not in ("Ks", "Kns"):
        raise ValueError(f"unknown branch {branch!r}")
    return branch


def _spectral_stencil(grid: TorusGrid) -> LevyStencil:
    """``-(-Delta)^{1/2}`` divided by ``c_d``, i.e. in units of the raw kernel ``|z|^{-(d+1)}``."""
    coef = np.real(np.fft.ifftn(-half_laplacian_symbol(grid))) / HALF_LAPLACIAN_CONSTANT[grid.dim]
    coef.setflags(write=False)
    return LevyStencil(grid, coef, np.zeros(grid.dim))


_SPECTRAL: dict = {}


def cell_operator(data: ProblemData, branch: str, b_tilde: np.ndarray):
    """Factors, stencils and effective drifts of the cell operator on the fast grid."""
    g = data.fast_grid
    kernel = data.kernel
    xis = g.nodes()
    factors, stencils, drifts = [], [], []
    b_K = None
    if branch == "Kns":
        if g not in _SPECTRAL:
            _SPECTRAL[g] = _spectral_stencil(g)
        st = _SPECTRAL[g]
        flat = xis.reshape(-1, g.dim)
        b_K = np.empty((data.controls, g.dim) + g.shape)
        for a in range(data.controls):
            factors.append(kernel.spatial_factor(a, xis))
            stencils.append(st)
            bk = np.array([drift_correction(kernel, a, xi) for xi in flat])
            b_K[a] = np.moveaxis(bk.reshape(g.shape + (g.dim,)), -1, 0)
            drifts.append(b_tilde[a] + b_K[a])
        return np.stack(factors), stencils, np.stack(drifts), b_K
    for a in range(data.controls):
        if kernel.family == "matrix_anisotropic":
            if not kernel.xi_independent:
                raise KernelDomainError("cell problems with xi-dependent matrix kernels are not supported")
            st = levy_stencil(kernel, a, np.zeros(g.dim), g)
            fac = np.ones(g.shape)
        else:
            st = unit_stencil(kernel, a, g)
            fac = kernel.spatial_factor(a, xis)
        factors.append(fac)
        stencils.append(st)
        drifts.append(b_tilde[a] - fac[None] * st.m1.reshape((g.dim,) + (1,) * g.dim))
    return np.stack(factors), stencils, np.stack(drifts), b_K


def cell_from_tables(
    data: ProblemData,
    x,
    p,
    f_tilde: np.ndarray,
    b_tilde: np.ndarray | None = None,
    branch: str | None = None,
    u: GridFunction | None = None,
    local: LocalData | None = None,
    meta: dict | None = None,
) -> CellProblem:
    """Cell problem from precomputed source (and optionally drift) tables."""
    branch = resolve_branch(data, branch)
    g = data.fast_grid
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if b_tilde is None:
        b_tilde = np.stack([np.moveaxis(data.drift_at(a, x, g.nodes()), -1, 0) for a in range(data.controls)])
    f_tilde = np.asarray(f_tilde, dtype=float).reshape((data.controls,) + g.shape)
    factors, stencils, drifts, b_K = cell_operator(data, branch, b_tilde)
    return CellProblem(data, x, p, u, local, branch, f_tilde, b_tilde, factors, stencils, drifts, b_K, meta or {})


def build_cell_problem(
    data: ProblemData, x, p, u: GridFunction, rho: float = 0.5, branch: str | None = None
) -> CellProblem:
    """Tabulate ``f~^a`` and ``b~^a`` on the fast grid.

    The compensator of ``L^a(x, xi, u)`` uses the centered gradient of ``u``
    at ``x``.
    """
    branch = resolve_branch(data, branch)
    if not np.all(np.isfinite(u.values)):
        raise ValueError("u must be finite")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if x.shape != (data.dim,) or p.shape != (data.dim,):
        raise ValueError("x and p need one entry per dimension")
    loc = local_data(u, x, rho)
    g = data.fast_grid
    xis = g.nodes()
    lev = levy_table(data, u, x, loc.gradient)
    f_t, b_t = [], []
    for a in range(data.controls):
        b = data.drift_at(a, x, xis)
        f_t.append(data.cost_at(a, x, xis) + b @ p + lev[a])
        b_t.append(np.moveaxis(b, -1, 0))
    return cell_from_tables(data, x, p, np.stack(f_t), np.stack(b_t), branch, u, loc)


# --------------------------------------------------------------------------
# solving


@dataclass
class EffectiveEvaluation:
    lam: float
    psi: GridFunction
    deltas: list[float]
    lambdas: list[float]
    residuals: list[float]
    lam_richardson: float | None
    lam_mean: float | None
    lip: float
    iterations: int
    converged: bool
    policy: np.ndarray | None = None
    bound_inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "lambda_sequence": self.lambdas,
            "delta_sequence": self.deltas,
            "lambda_richardson": self.lam_richardson,
            "lambda_mean_diagnostic": self.lam_mean,
            "residuals": self.residuals,
            "lip_measured": self.lip,
            "lip_bound_inputs": self.bound_inputs,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def ergodic_policy_iteration(
    problem: DiscreteBellman,
    matrices: list[np.ndarray],
    policy: np.ndarray | None = None,
    anchor: int = 0,
    max_iters: int = 200,
) -> tuple[float, np.ndarray, np.ndarray, int]:
    """Exact discrete ``max_a (G^a psi - f^a) = lambda`` with ``psi[anchor] = 0``."""
    N = problem.grid.size
    fs = np.stack([op.source.ravel() for op in problem.ops])
    Gs = np.stack(matrices)
    rows = np.arange(N)
    if policy is None:
        pol = np.argmax(-fs, axis=0)
    else:
        pol = np.asarray(policy).ravel().copy()
    keep = np.arange(N) != anchor
    for it in range(1, max_iters + 1):
        Gp = Gs[pol, rows]
        # unknowns: psi without the anchor entry, then lambda
        A = np.concatenate([Gp[:, keep], -np.ones((N, 1))], axis=1)
        sol = np.linalg.solve(A, fs[pol, rows])
        psi = np.insert(sol[:-1], anchor, 0.0)
        lam = float(sol[-1])
        vals = np.einsum("aij,j->ai", Gs, psi) - fs
        best = vals.max(axis=0)
        current = vals[pol, rows]
        scale = 1e-11 * (1.0 + np.abs(vals).max())
        improve = best > current + scale
        if not improve.any():
            return lam, psi, pol, it
        pol = np.where(improve, np.argmax(vals, axis=0), pol)
    raise ConvergenceError("ergodic policy iteration did not stabilise")


def solve_cell(
    cp: CellProblem,
    deltas=DEFAULT_DELTAS,
    tol: float = 1e-7,
    anchor: int = 0,
    ergodic: bool = True,
    strict: bool = False,
) -> EffectiveEvaluation:
    """Vanishing-discount ladder followed by the exact discrete ergodic constant.

    ``lambda_k = -delta_k psi^{delta_k}(anchor)`` is recorded for every
    ``delta_k`` (warm-started); the first-order Richardson value
    ``2 lambda_{K} - lambda_{K-1}`` is kept as a diagnostic. With
    ``ergodic=False`` the Richardson value is returned as ``lambda``.
    """
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ValueError("discounts must be positive")
    if any(b > a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("discount sequence must be decreasing")
    if not ergodic and len(deltas) < 2:
        raise ValueError("Richardson extrapolation needs two discounts")
    problem = cp.bellman()
    mats = cp.matrices()
    g = cp.fast_grid
    lambdas, residuals, means = [], [], []
    init = None
    iters = 0
    psi_last = None
    for dlt in deltas:
        res = solve_stationary_discounted(problem, dlt, tol=max(tol, 1e-12 / dlt), init=init, matrices=mats)
        v = res.psi.values.ravel()
        lambdas.append(-dlt * float(v[anchor]))
        means.append(-dlt * float(v.mean()))
        residuals.append(res.residual)
        init = res.psi.values
        iters += res.iterations
        psi_last = v
    rich = None
    converged = True
    if len(deltas) >= 2:
        k = len(deltas) - 1
        while k >= 1 and deltas[k] == deltas[k - 1]:
            k -= 1
        if k >= 1:
            if abs(deltas[k - 1] / deltas[k] - 2.0) > 1e-12:
                raise ValueError("the last two distinct discounts must differ by a factor 2")
            rich = 2 * lambdas[k] - lambdas[k - 1]
        diffs = np.abs(np.diff(lambdas))[-3:]
        converged = bool(np.all(np.diff(diffs) <= 1e-10 + 1e-6 * diffs[:-1])) if len(diffs) >= 2 else True
        if strict and not converged:
            raise ConvergenceError(f"lambda_k not Cauchy along the ladder: {lambdas[-4:]}")
    pol = None
    if ergodic:
        pol0 = np.argmax(problem.control_values(psi_last.reshape(g.shape)), axis=0) if psi_last is not None else None
        lam, psi, pol, it = ergodic_policy_iteration(problem, mats, pol0, anchor)
        iters += it
        residuals.append(float(np.abs(problem.hamiltonian(psi.reshape(g.shape)) - lam).max()))
    else:
        lam = rich
        psi = psi_last - psi_last[anchor]
    psi_gf = GridFunction(g, psi.reshape(g.shape))
    inputs = {"p_norm": float(np.linalg.norm(cp.p)), "branch": cp.branch}
    if cp.local is not None and cp.u is not None:
        inputs.update(rho=cp.local.rho, c_rho=c_rho_constant(cp))
    return EffectiveEvaluation(
        lam, psi_gf, deltas, lambdas, residuals, rich, means[-1] if means else None,
        lipschitz_seminorm(psi_gf), iters, converged, pol, inputs,
    )


# --------------------------------------------------------------------------
# corrector Lipschitz bound


def c_rho_constant(cp: CellProblem) -> float:
    """``||D^2 u||_{B_rho(x)} rho + |Du(x)| |ln rho| + ||u||_inf / rho``.

    The middle term is dropped for the symmetric branch.
    """
    if cp.local is None or cp.u is None:
        raise ValueError("cell problem carries no local data of u")
    loc = cp.local
    rho = loc.rho
    val = loc.hessian_sup * rho + cp.u.sup_norm() / rho
    if cp.branch == "Kns":
        val += float(np.linalg.norm(loc.gradient)) * abs(math.log(rho))
    return float(val)


def growth_factor(p, c_rho: float, sigma: float) -> float:
    return float((1.0 + np.linalg.norm(np.atleast_1d(p)) + c_rho) ** (1.0 / (1.0 + sigma)))


def corrector_lipschitz_report(ev: EffectiveEvaluation, cp: CellProblem, sigma: float) -> dict:
    """Measured ``Lip(psi)`` against ``(1 + |p| + C_rho)^{1/(1+sigma)}``."""
    d = cp.data
    cap = min(d.alpha, d.beta, d.kernel.gamma)
    if not 0 < sigma < cap:
        raise ValueError(f"sigma must lie in (0, {cap})")
    c_rho = c_rho_constant(cp)
    gf = growth_factor(cp.p, c_rho, sigma)
    return {
        "lip_measured": ev.lip,
        "p_norm": float(np.linalg.norm(cp.p)),
        "c_rho": c_rho,
        "sigma": sigma,
        "growth_factor": gf,
        "implied_C_sigma": ev.lip / gf,
    }


def implied_constant_spread(reports: list[dict]) -> float:
    """``max / min`` of the implied ``C_sigma`` over a family of reports."""
    vals = [r["implied_C_sigma"] for r in reports if r["implied_C_sigma"] > 0]
    if not vals:
        return 1.0
    return max(vals) / min(vals)
