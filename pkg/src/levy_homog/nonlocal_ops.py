"""Compensated Lévy operators, the half Laplacian and the Pucci extremal operators.

The operator ``L f(x) = int (f(x+z) - f(x) - 1_B(z) g . z) K(z) dz`` is split
into three pieces:

* ``|z| < rho_sing``: second moment of ``K`` times second differences of ``f``;
* ``rho_sing <= |z| <= R_max``: Gauss nodes on radial shells, ``f`` sampled by
  periodic multilinear interpolation, compensator ``-g . m1`` on the unit ball;
* ``|z| > R_max``: ``(mean(f) - f(x))`` times the tail mass of ``K``.

All weights are nonnegative, so the discrete operator is monotone. At grid
nodes the whole thing is a circulant stencil, which is what the solvers use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .grid import GridFunction, GridMismatchError, TorusGrid, interpolate
from .kernels import (
    R_MAX,
    KernelDomainError,
    LevyKernel,
    QuadratureError,
    polar_integral,
    power_tail,
)
from .families import TrigPoly

# c_d with c_d * int (f(x+z) - f(x)) |z|^{-(d+1)} dz = -(-Delta)^{1/2} f
HALF_LAPLACIAN_CONSTANT = {1: 1.0 / math.pi, 2: 1.0 / (2.0 * math.pi)}


def half_laplacian_constant(dim: int, s: float = 0.5) -> float:
    """``4^s Gamma(d/2 + s) / (pi^{d/2} |Gamma(-s)|)``."""
    return 4**s * math.gamma(dim / 2 + s) / (math.pi ** (dim / 2) * abs(math.gamma(-s)))


def half_laplacian_kernel(dim: int = 1, factor: float = 1.0) -> LevyKernel:
    """``c_d |z|^{-(d+1)}``, whose Lévy operator is ``-(-Delta)^{1/2}``."""
    return LevyKernel(
        "separable", dim, spatial=(TrigPoly.constant(dim, factor * HALF_LAPLACIAN_CONSTANT[dim]),), C_K=10.0
    )


@dataclass(frozen=True)
class QuadratureScheme:
    """Discretization of one kernel slice ``K^a(xi, .)`` on a grid of spacing ``h``.

    ``local_offsets``/``local_weights`` carry the singular cell (offsets in
    units of ``h``), ``nodes``/``weights`` the shells, ``m1`` the shell first
    moment on the unit ball (compensator) and ``tail_mass`` the mass beyond
    ``R_max``.
    """

    h: float
    rho_sing: float
    R_max: float
    local_offsets: np.ndarray
    local_weights: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    m1: np.ndarray
    M2: np.ndarray
    tail_mass: float

    def __post_init__(self):
        if np.any(self.weights < 0) or np.any(self.local_weights < -1e-14) or self.tail_mass < 0:
            raise QuadratureError("negative quadrature weight")
        if not (0.5 * self.h - 1e-15 <= self.rho_sing <= 1.0):
            raise ValueError("rho_sing must lie in [h/2, 1]")

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def total_weight(self) -> float:
        """Sum of all off-centre weights: the stencil diagonal."""
        return float(self.local_weights.sum() + self.weights.sum() + self.tail_mass)

    def scaled(self, c: float) -> "QuadratureScheme":
        if c < 0:
            raise ValueError("kernel factor must be nonnegative")
        return replace(
            self,
            local_weights=c * self.local_weights,
            weights=c * self.weights,
            m1=c * self.m1,
            M2=c * self.M2,
            tail_mass=c * self.tail_mass,
        )

    def shell_report(self) -> dict:
        r = np.linalg.norm(self.nodes, axis=1)
        edges = [self.rho_sing, 1.0, self.R_max]
        return {
            "rho_sing": self.rho_sing,
            "R_max": self.R_max,
            "singular_weight": float(self.local_weights.sum()),
            "ball_weight": float(self.weights[r < 1].sum()),
            "crown_weight": float(self.weights[(r >= 1)].sum()),
            "tail_mass": self.tail_mass,
            "m1": self.m1.tolist(),
            "edges": edges,
        }


def _shell_nodes(dim: int, h: float, rho: float, R: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Radii/directions/weights of ``dz`` on ``rho <= |z| <= R`` (kernel not applied)."""
    # h-spaced radii up to 1 so that the piecewise linear interpolant is
    # integrated almost exactly; geometric growth beyond
    inner = rho + h * np.arange(int(math.floor((1.0 - rho) / h + 1e-9)) + 1)
    if inner[-1] < 1.0 - 1e-12:
        inner = np.append(inner, 1.0)
    outer = [1.0]
    while outer[-1] < R - 1e-12:
        outer.append(min(R, outer[-1] * (1 + h)))
    breaks = np.unique(np.concatenate([inner, outer]))
    breaks = breaks[(breaks >= rho - 1e-15) & (breaks <= R + 1e-15)]
    order = 4 if dim == 1 else 3
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1], breaks[1:]
    r = (0.5 * (b - a)[:, None] * x[None] + 0.5 * (b + a)[:, None])
    wr = 0.5 * (b - a)[:, None] * w[None]
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
        z = (r.ravel()[:, None, None] * dirs[None]).reshape(-1, 1)
        wz = np.repeat(wr.ravel(), 2)
        return z, wz, np.repeat(r.ravel(), 2)
    zs, ws, rs = [], [], []
    mid = 0.5 * (a + b)
    for k in range(len(a)):
        n_theta = int(min(256, max(16, 4 * math.ceil(2 * math.pi * mid[k] / (4 * h)))))
        theta = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        dirs = np.stack([np.cos(theta), np.sin(theta)], -1)
        rk = r[k]
        zs.append((rk[:, None, None] * dirs[None]).reshape(-1, 2))
        ws.append(np.repeat(wr[k] * rk, n_theta) * (2 * np.pi / n_theta))
        rs.append(np.repeat(rk, n_theta))
    return np.concatenate(zs), np.concatenate(ws), np.concatenate(rs)


def _second_moment(kernel: LevyKernel, a: int, xi, rho: float) -> np.ndarray:
    d = kernel.dim
    r_lo = rho * 2.0**-20

    def comp(i, j):
        g = lambda z, r: z[..., i] * z[..., j] * kernel.density(a, xi, z)  # noqa: E731
        val = polar_integral(g, d, r_lo, rho)
        # |z|^2 K has a bounded radial density near 0
        return val + 2 * polar_integral(g, d, 0.5 * r_lo, r_lo)

    M = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            M[i, j] = M[j, i] = comp(i, j)
    return M


def _local_stencil(M2: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Monotone difference weights for ``1/2 M2 : D^2 f``."""
    d = M2.shape[0]
    offs, wts = [], []
    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        c = 0.5 * M2[i, i] / h**2
        offs += [e, -e]
        wts += [c, c]
    if d == 2 and M2[0, 1] != 0:
        m = M2[0, 1]
        c = abs(m) / (2 * h**2)
        diag = np.array([1, 1]) if m > 0 else np.array([1, -1])
        offs += [diag, -diag]
        wts += [c, c]
        for e in (np.array([1, 0]), np.array([0, 1])):
            offs += [e, -e]
            wts += [-c, -c]
    offs = np.array(offs, dtype=int).reshape(-1, d)
    wts = np.array(wts, dtype=float)
    # merge duplicate offsets
    uniq, inv = np.unique(offs, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv.ravel(), wts)
    if np.any(merged < -1e-12 * max(1.0, np.abs(merged).max())):
        # second moment not diagonally dominant: fall back to the diagonal part
        return _local_stencil(np.diag(np.diag(M2)), h)
    return uniq, np.maximum(merged, 0.0)


def build_scheme(kernel: LevyKernel, a: int, xi, grid: TorusGrid, rho_sing: float | None = None) -> QuadratureScheme:
    """Quadrature scheme for ``K^a(xi, .)`` on ``grid`` (cached for factorized kernels)."""
    if grid.dim != kernel.dim:
        raise GridMismatchError("kernel and grid dimensions differ")
    xi = tuple(np.atleast_1d(np.asarray(xi, dtype=float)).tolist())
    rho = grid.h if rho_sing is None else float(rho_sing)
    if kernel.family != "matrix_anisotropic":
        factor = float(kernel.spatial_factor(a, np.array(xi)))
        if factor < 0:
            raise KernelDomainError("negative spatial factor")
        return _unit_scheme(_unit_kernel(kernel, a), grid.h, rho).scaled(factor)
    return _scheme_cached(kernel, a, xi, grid.h, rho)


def _unit_kernel(kernel: LevyKernel, a: int) -> LevyKernel:
    return replace(
        kernel,
        spatial=(TrigPoly.constant(kernel.dim, 1.0),),
        angular=(kernel.angular[a],) if kernel.angular else (),
        modulation=(kernel.mod(a),) if kernel.modulation else (),
        scale=1.0,
        meta={},
    )


@lru_cache(maxsize=64)
def _unit_scheme(kernel: LevyKernel, h: float, rho: float) -> QuadratureScheme:
    return _scheme_cached.__wrapped__(kernel, 0, (0.0,) * kernel.dim, h, rho)


@lru_cache(maxsize=4096)
def _scheme_cached(kernel: LevyKernel, a: int, xi: tuple, h: float, rho: float) -> QuadratureScheme:
    d = kernel.dim
    xi_arr = np.array(xi)
    z, wz, r = _shell_nodes(d, h, rho, R_MAX)
    w = wz * kernel.density(a, xi_arr, z)
    keep = w > 0
    z, w, r = z[keep], w[keep], r[keep]
    m1 = (w[r < 1.0, None] * z[r < 1.0]).sum(axis=0)
    M2 = _second_moment(kernel, a, xi_arr, rho)
    offs, lw = _local_stencil(M2, h)
    tail = power_tail(lambda zz: kernel.density(a, xi_arr, zz), d)
    scheme = QuadratureScheme(h, rho, R_MAX, offs, lw, z, w, m1, M2, tail)
    scheme.nodes.setflags(write=False)
    scheme.weights.setflags(write=False)
    return scheme


# --------------------------------------------------------------------------
# pointwise and stencil evaluation


def apply_levy(kernel: LevyKernel, a: int, xi, f: GridFunction, x, grad_x, scheme: QuadratureScheme | None = None) -> float:
    """``int (f(x+z) - f(x) - 1_B(z) grad_x . z) K^a(xi, z) dz`` at a point ``x``."""
    grid = f.grid
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.atleast_1d(np.asarray(grad_x, dtype=float))
    if x.shape != (grid.dim,) or g.shape != (grid.dim,):
        raise GridMismatchError("point and gradient must have grid dimension")
    sc = scheme if scheme is not None else build_scheme(kernel, a, xi, grid)
    fx = float(interpolate(f.values, x[None])[0])
    local = interpolate(f.values, x[None] + sc.local_offsets * grid.h) - fx
    shells = interpolate(f.values, x[None] + sc.nodes) - fx
    val = float(local @ sc.local_weights + shells @ sc.weights - g @ sc.m1 + sc.tail_mass * (f.mean() - fx))
    if not math.isfinite(val):
        raise QuadratureError(f"non-finite Lévy operator value; shells: {sc.shell_report()}")
    return val


@dataclass(frozen=True)
class LevyStencil:
    """Circulant form ``(L f)_i = sum_j coef[j] f[i+j] - g_i . m1`` at grid nodes.

    ``coef`` has the grid shape, indexed by offset modulo ``n``; its entries
    off the origin are nonnegative and the whole array sums to zero.
    """

    grid: TorusGrid
    coef: np.ndarray
    m1: np.ndarray

    @property
    def diagonal(self) -> float:
        return float(-self.coef.flat[0])

    def scaled(self, c: float) -> "LevyStencil":
        return LevyStencil(self.grid, c * self.coef, c * self.m1)

    def correlate(self, values: np.ndarray) -> np.ndarray:
        """``sum_j coef[j] values[i+j]`` for every node ``i``."""
        axes = tuple(range(self.grid.dim))
        spec = np.fft.rfftn(values, axes=axes) * np.conj(np.fft.rfftn(self.coef, axes=axes))
        return np.fft.irfftn(spec, s=self.grid.shape, axes=axes)

    def apply(self, values: np.ndarray, grad: np.ndarray | None = None) -> np.ndarray:
        out = self.correlate(values)
        if grad is not None:
            out = out - np.tensordot(self.m1, grad, axes=(0, 0))
        return out

    def row(self, i: int) -> np.ndarray:
        """Dense matrix row of node ``i`` (flat index) without the compensator."""
        d = self.grid.dim
        idx = np.unravel_index(i, self.grid.shape)
        out = self.coef
        for ax in range(d):
            out = np.roll(out, idx[ax], axis=ax)
        return out.ravel()

    def matrix(self) -> np.ndarray:
        return circulant_matrix(self.coef)


def circulant_matrix(coef: np.ndarray) -> np.ndarray:
    """Dense ``A`` with ``(A v)_i = sum_j coef[j] v[i+j]`` (periodic, row-major)."""
    shape = coef.shape
    N = coef.size
    idx = np.indices(shape).reshape(len(shape), -1)
    n = shape[0]
    # column index of (i + j) for all i, j
    if len(shape) == 1:
        cols = (np.arange(N)[:, None] + np.arange(N)[None]) % n
        A = np.zeros((N, N))
        A[np.arange(N)[:, None], cols] = coef[None, :]
        return A
    i0, i1 = idx
    c0 = (i0[:, None] + i0[None]) % n
    c1 = (i1[:, None] + i1[None]) % n
    cols = c0 * n + c1
    A = np.zeros((N, N))
    A[np.arange(N)[:, None], cols] = coef.ravel()[None, :]
    return A


def _hat_scatter(grid: TorusGrid, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Spread weights at offsets ``z`` onto nodes with multilinear hat functions."""
    n, d = grid.n, grid.dim
    s = z / grid.h
    base = np.floor(s)
    t = s - base
    base = base.astype(np.int64)
    out = np.zeros(grid.shape)
    if d == 1:
        np.add.at(out, base[:, 0] % n, w * (1 - t[:, 0]))
        np.add.at(out, (base[:, 0] + 1) % n, w * t[:, 0])
        return out
    for dx in (0, 1):
        for dy in (0, 1):
            wx = t[:, 0] if dx else 1 - t[:, 0]
            wy = t[:, 1] if dy else 1 - t[:, 1]
            np.add.at(out, ((base[:, 0] + dx) % n, (base[:, 1] + dy) % n), w * wx * wy)
    return out


def stencil_from_scheme(scheme: QuadratureScheme, grid: TorusGrid) -> LevyStencil:
    if abs(scheme.h - grid.h) > 1e-15:
        raise GridMismatchError("scheme built for another spacing")
    coef = _hat_scatter(grid, scheme.nodes, scheme.weights)
    coef += _hat_scatter(grid, scheme.local_offsets * grid.h, scheme.local_weights)
    coef += scheme.tail_mass / grid.size
    # row sum zero: every weight w contributes w (f_j - f_i)
    coef.flat[0] -= coef.sum()
    coef.setflags(write=False)
    return LevyStencil(grid, coef, scheme.m1.copy())


@lru_cache(maxsize=256)
def _unit_stencil(kernel: LevyKernel, grid: TorusGrid) -> LevyStencil:
    return stencil_from_scheme(_unit_scheme(kernel, grid.h, grid.h), grid)


def levy_stencil(kernel: LevyKernel, a: int, xi, grid: TorusGrid) -> LevyStencil:
    """Stencil of ``L^a(xi)`` at the nodes of ``grid``."""
    if kernel.family != "matrix_anisotropic":
        factor = float(kernel.spatial_factor(a, np.atleast_1d(np.asarray(xi, dtype=float))))
        return _unit_stencil(_unit_kernel(kernel, a), grid).scaled(factor)
    return stencil_from_scheme(build_scheme(kernel, a, xi, grid), grid)


def unit_stencil(kernel: LevyKernel, a: int, grid: TorusGrid) -> LevyStencil:
    """Stencil of the xi-free part ``K0^a`` of a factorized kernel."""
    if kernel.family == "matrix_anisotropic":
        raise KernelDomainError("matrix_anisotropic kernels have no scalar factor")
    return _unit_stencil(_unit_kernel(kernel, a), grid)


def apply_levy_grid(kernel: LevyKernel, a: int, xi, f: GridFunction, grad: np.ndarray) -> np.ndarray:
    """``L^a(xi) f`` at every node, ``grad`` of shape ``(dim, *shape)``."""
    st = levy_stencil(kernel, a, xi, f.grid)
    return st.apply(f.values, np.asarray(grad, dtype=float).reshape((f.grid.dim,) + f.grid.shape))


# --------------------------------------------------------------------------
# spectral half Laplacian


def half_laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    """``|2 pi k|`` on the full FFT frequency grid."""
    k = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    ks = np.meshgrid(*([k] * grid.dim), indexing="ij")
    return 2 * np.pi * np.sqrt(sum(kk**2 for kk in ks))


def fractional_laplacian_half(f: GridFunction) -> GridFunction:
    """``(-Delta)^{1/2} f`` through the Fourier multiplier ``|2 pi k|``."""
    n = f.grid.n
    if n & (n - 1):
        raise ValueError("spectral path needs n a power of two")
    spec = np.fft.fftn(f.values) * half_laplacian_symbol(f.grid)
    return GridFunction(f.grid, np.real(np.fft.ifftn(spec)))


def half_laplacian_matrix(grid: TorusGrid) -> np.ndarray:
    """Dense matrix of ``-(-Delta)^{1/2}`` on the grid (spectral, circulant)."""
    coef = np.real(np.fft.ifftn(-half_laplacian_symbol(grid)))
    # (A v)_i = sum_j c[j - i] v[j] with c even, equal to the correlation form
    return circulant_matrix(coef)


# --------------------------------------------------------------------------
# Pucci extremal operators


def _levy_over_fast_grid(problem, x, f: GridFunction, grad_x) -> np.ndarray:
    """Values ``L^a(xi, f)(x)`` for all controls and fast nodes, shape ``(m, n_fast)``."""
    kernel = problem.kernel
    xis = problem.fast_grid.flat_nodes()
    out = np.empty((kernel.controls, len(xis)))
    for a in range(kernel.controls):
        if kernel.family != "matrix_anisotropic":
            base = apply_levy(kernel, a, xis[0], f, x, grad_x, scheme=_unit_scheme(_unit_kernel(kernel, a), f.grid.h, f.grid.h))
            out[a] = kernel.spatial_factor(a, xis) * base
        else:
            out[a] = [apply_levy(kernel, a, xi, f, x, grad_x) for xi in xis]
    return out


def pucci_plus(problem, x, f: GridFunction, grad_x) -> float:
    """``sup_a sup_xi L^a(xi, f)(x)`` over the fast grid of ``problem``."""
    return float(_levy_over_fast_grid(problem, x, f, grad_x).max(axis=1).max())


def pucci_minus(problem, x, f: GridFunction, grad_x) -> float:
    """``sup_a inf_xi L^a(xi, f)(x)`` over the fast grid of ``problem``."""
    return float(_levy_over_fast_grid(problem, x, f, grad_x).min(axis=1).max())
