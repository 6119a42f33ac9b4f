"""Lévy jump kernels of order one and numerical checks of their structural bounds.

Four families are provided:

``matrix_anisotropic``
    ``K(xi, z) = |M(xi) z . z|^{-(d+1)/2}`` with ``M`` symmetric positive.
``angular``
    ``K(xi, z) = s(xi) (1 + sum_j a_j cos(2 j theta)) / |z|^{d+1}``.
``separable``
    ``K(xi, z) = s(xi) (1 + m(z) 1_B(z)) / |z|^{d+1}``; with a nonzero
    modulation ``m`` the kernel is non-symmetric (or non-homogeneous) and the
    cell problem picks up the drift correction :func:`drift_correction`.
``half_space``
    ``K(xi, z) = 1_{z_i > 0} s(xi) / |z|^{d+1}``.

All spatial factors are trigonometric polynomials, hence 1-periodic in ``xi``.
Integrals over ``z`` use polar quadrature: Gauss-Legendre on radial shells
that halve towards the origin, times uniform angular nodes (the two signs in
1D, 64 midpoint angles in 2D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .families import TrigPoly

FAMILIES = ("matrix_anisotropic", "angular", "separable", "half_space")
R_MAX = 8.0
N_ANGLES_2D = 64
GAUSS_ORDER = 8


class KernelDomainError(ValueError):
    """The requested operation is not defined for this kernel or argument."""


class QuadratureError(RuntimeError):
    """A quadrature failed to converge or produced a non-finite value."""


@dataclass(frozen=True)
class Modulation:
    """One term of the z-modulation ``m(z)``, active on the unit ball only.

    ``kind`` is ``"linear"`` (``coef . z``), ``"radial_power"``
    (``coef |z|^power``) or ``"inv_log"`` (``coef / (1 + |ln|z||)``).
    """

    kind: str
    coef: tuple[float, ...]
    power: float = 1.0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(z, axis=-1)
        if self.kind == "linear":
            val = z @ np.asarray(self.coef, dtype=float)
        elif self.kind == "radial_power":
            val = self.coef[0] * r**self.power
        elif self.kind == "inv_log":
            with np.errstate(divide="ignore"):
                val = self.coef[0] / (1.0 + np.abs(np.log(np.where(r > 0, r, 1.0))))
            val = np.where(r > 0, val, 0.0)
        else:
            raise ValueError(f"unknown modulation kind {self.kind!r}")
        return np.where(r < 1.0, val, 0.0)

    @property
    def odd(self) -> bool:
        return self.kind == "linear"


@dataclass(frozen=True)
class LevyKernel:
    """A family ``K^a(xi, z)``, one density per control ``a``."""

    family: str
    dim: int
    spatial: tuple[TrigPoly, ...] = ()
    matrices: tuple[tuple[tuple[TrigPoly, ...], ...], ...] = ()
    angular: tuple[tuple[float, ...], ...] = ()
    modulation: tuple[tuple[Modulation, ...], ...] = ()
    axis: int = 0
    symmetric: bool = True
    C_K: float = 10.0
    gamma: float = 1.0
    c_K: float = 4.0
    C_K_lower: float | None = None  # cone constant; defaults to C_K
    scale: float = 1.0
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dim not in (1, 2):
            raise ValueError("kernel dimension must be 1 or 2")
        if self.family == "matrix_anisotropic":
            if not self.matrices:
                raise ValueError("matrix_anisotropic kernel needs matrices")
        elif not self.spatial:
            raise ValueError(f"{self.family} kernel needs spatial factors")
        if self.family == "separable" and self.modulation and len(self.modulation) != self.controls:
            raise ValueError("one modulation list per control expected")
        if self.family == "half_space" and self.symmetric:
            raise ValueError("half_space kernels are not symmetric")
        if self.family == "separable" and self.symmetric and any(self.modulation):
            raise ValueError("a modulated separable kernel cannot be declared symmetric")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def controls(self) -> int:
        return len(self.matrices) if self.family == "matrix_anisotropic" else len(self.spatial)

    @property
    def homogeneous(self) -> bool:
        """True when ``K(xi, e z) = e^{-(d+1)} K(xi, z)``."""
        return not (self.family == "separable" and any(self.modulation))

    @property
    def xi_independent(self) -> bool:
        if self.family == "matrix_anisotropic":
            return not any(p.terms for m in self.matrices for row in m for p in row)
        return not any(p.terms for p in self.spatial)

    @property
    def is_separable_factor(self) -> bool:
        """``K^a(xi, z) = k^a(xi) K0^a(z)`` with ``K0`` independent of ``xi``."""
        return self.family in ("separable", "half_space", "angular") or self.xi_independent

    @property
    def cone_constant(self) -> float:
        return self.C_K if self.C_K_lower is None else self.C_K_lower

    def scaled(self, s: float) -> "LevyKernel":
        return replace(self, scale=self.scale * s)

    def mod(self, a: int) -> tuple[Modulation, ...]:
        return self.modulation[a] if self.modulation else ()

    def spatial_factor(self, a: int, xi) -> np.ndarray:
        """``s^a(xi)`` times the global scale (families with a spatial factor)."""
        if self.family == "matrix_anisotropic":
            raise KernelDomainError("matrix_anisotropic kernels have no scalar spatial factor")
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 0 or xi.shape[-1] != self.dim:
            xi = xi[..., None]
        return self.scale * self.spatial[a](xi)

    def matrix(self, a: int, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        rows = self.matrices[a]
        return np.array([[float(p(xi)) for p in row] for row in rows])

    def density(self, a: int, xi, z) -> np.ndarray:
        """Vectorized ``K^a(xi, z)`` for one ``xi`` and ``z`` of shape ``(..., d)``."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1)
        with np.errstate(divide="ignore"):
            base = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0) ** (self.dim + 1), np.inf)
        if self.family == "matrix_anisotropic":
            m = self.matrix(a, xi)
            q = np.einsum("...i,ij,...j->...", z, m, z)
            with np.errstate(divide="ignore"):
                return self.scale * np.where(r > 0, np.abs(q) ** (-(self.dim + 1) / 2), np.inf)
        s = float(self.scale * self.spatial[a](xi))
        if self.family == "separable":
            g = 1.0
            for mterm in self.mod(a):
                g = g + mterm(z)
            return s * g * base
        if self.family == "half_space":
            return np.where(z[..., self.axis] > 0, s * base, 0.0)
        # angular
        coeffs = self.angular[a] if self.angular else ()
        if self.dim == 1 or not coeffs:
            ang = 1.0 + (sum(coeffs) if self.dim == 1 else 0.0)
        else:
            # fold z onto the upper half-plane so the density is exactly even
            flip = (z[..., 1] < 0) | ((z[..., 1] == 0) & (z[..., 0] < 0))
            zf = np.where(flip[..., None], -z, z)
            theta = np.arctan2(zf[..., 1], zf[..., 0])
            ang = 1.0 + sum(c * np.cos(2 * (j + 1) * theta) for j, c in enumerate(coeffs))
        return s * ang * base

    def factor(self, a: int, xi, z) -> np.ndarray:
        """``k^a(xi, z) = K^a(xi, z) |z|^{d+1}`` for the separable family."""
        if self.family != "separable":
            raise KernelDomainError("factor is defined for the separable family only")
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        z = np.asarray(z, dtype=float)
        g = np.ones(z.shape[:-1])
        for mterm in self.mod(a):
            g = g + mterm(z)
        return float(self.scale * self.spatial[a](xi)) * g

    def factor_at_zero(self, a: int, xi) -> float:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return float(self.scale * self.spatial[a](xi))

    def validate(self, n_xi: int = 32) -> None:
        """Check nonnegativity and the eigenvalue band on a sample of ``xi``."""
        xis = _xi_samples(self.dim, n_xi)
        dirs, _ = angular_nodes(self.dim)
        radii = np.array([1e-3, 0.1, 0.5, 0.99, 2.0])
        z = (radii[:, None, None] * dirs[None]).reshape(-1, self.dim)
        for a in range(self.controls):
            for xi in xis:
                if self.family == "matrix_anisotropic":
                    ev = np.linalg.eigvalsh(self.matrix(a, xi))
                    if ev.min() < 1 / self.c_K - 1e-12 or ev.max() > self.c_K + 1e-12:
                        raise ValueError(f"matrix eigenvalues {ev} outside [1/c_K, c_K]")
                if np.any(self.density(a, xi, z) < 0):
                    raise ValueError(f"negative kernel density for control {a} at xi={xi}")


def evaluate(kernel: LevyKernel, a: int, xi, z) -> float:
    """Kernel density ``K^a(xi, z)``; ``z = 0`` is outside the domain."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.any(z):
        raise KernelDomainError("kernel density is undefined at z = 0")
    return float(kernel.density(a, xi, z[None])[0])


# --------------------------------------------------------------------------
# polar quadrature


def angular_nodes(dim: int, n_angles: int = N_ANGLES_2D) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and weights integrating over the sphere ``S^{d-1}``."""
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    theta = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1), np.full(n_angles, 2 * np.pi / n_angles)


def radial_breaks(r_lo: float, r_hi: float) -> np.ndarray:
    """Shell boundaries halving from ``min(r_hi, 1)`` down to ``r_lo``, doubling beyond 1."""
    if not 0 < r_lo < r_hi:
        raise ValueError("need 0 < r_lo < r_hi")
    pts = {r_lo, r_hi}
    r = min(r_hi, 1.0)
    while r > r_lo:
        pts.add(r)
        r /= 2
    r = 1.0
    while r < r_hi:
        if r > r_lo:
            pts.add(r)
        r *= 2
    return np.array(sorted(pts))


def radial_nodes(r_lo: float, r_hi: float, order: int = GAUSS_ORDER) -> tuple[np.ndarray, np.ndarray]:
    breaks = radial_breaks(r_lo, r_hi)
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x[None] + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w[None]
    return nodes.ravel(), weights.ravel()


def polar_integral(
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dim: int,
    r_lo: float,
    r_hi: float,
    directions: tuple[np.ndarray, np.ndarray] | None = None,
    order: int = GAUSS_ORDER,
) -> float:
    """``int_{r_lo<|z|<r_hi} integrand(z, r) dz`` in polar coordinates."""
    dirs, wdir = directions if directions is not None else angular_nodes(dim)
    r, wr = radial_nodes(r_lo, r_hi, order)
    z = r[:, None, None] * dirs[None, :, :]
    vals = integrand(z, np.broadcast_to(r[:, None], z.shape[:-1]))
    jac = r ** (dim - 1)
    return float(np.einsum("ij,i,j->", vals, wr * jac, wdir))


def checked_polar_integral(integrand, dim, r_lo, r_hi, directions=None, rtol=1e-6) -> tuple[float, bool]:
    lo = polar_integral(integrand, dim, r_lo, r_hi, directions, GAUSS_ORDER)
    hi = polar_integral(integrand, dim, r_lo, r_hi, directions, 2 * GAUSS_ORDER)
    ok = bool(np.isfinite(hi)) and abs(hi - lo) <= rtol * (1.0 + abs(hi))
    return hi, ok


def power_tail(integrand_at_R: Callable[[np.ndarray], np.ndarray], dim: int, R: float = R_MAX, directions=None) -> float:
    """``int_{|z|>R} g dz`` assuming ``g`` decays like ``|z|^{-(d+1)}`` beyond ``R``."""
    dirs, wdir = directions if directions is not None else angular_nodes(dim)
    vals = integrand_at_R(R * dirs)
    return float(R**dim * np.dot(vals, wdir))


# --------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionReport:
    assumption: str
    measured: float
    declared: float
    passed: bool
    samples: int
    converged: bool = True
    lower_bound: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "assumption": self.assumption,
            "measured": self.measured,
            "declared": self.declared,
            "passed": self.passed,
            "samples": self.samples,
            "converged": self.converged,
            "details": self.details,
        }


def _xi_samples(dim: int, n: int) -> np.ndarray:
    ax = np.arange(n) / n
    if dim == 1:
        return ax[:, None]
    mesh = np.meshgrid(ax, ax, indexing="ij")
    return np.stack(mesh, -1).reshape(-1, 2)


def _sample_set(kernel: LevyKernel, n_xi: int):
    xis = _xi_samples(kernel.dim, 1 if kernel.xi_independent else n_xi)
    return [(a, xi) for a in range(kernel.controls) for xi in xis]


def _passes(measured, declared, tol, lower=False) -> bool:
    if lower:
        return bool(measured >= declared * (1 - tol))
    return bool(measured <= declared * (1 + tol))


def check_levy_bound(kernel: LevyKernel, n_xi: int = 128, r_min: float | None = None, tol: float = 1e-3) -> AssumptionReport:
    """Estimate ``sup_{a, xi} int min(1, |z|^2) K^a(xi, z) dz`` and compare with ``C_K``."""
    r_min = r_min if r_min is not None else 0.25 / n_xi
    worst, converged = 0.0, True
    for a, xi in _sample_set(kernel, n_xi):
        inner, ok1 = checked_polar_integral(lambda z, r: r**2 * kernel.density(a, xi, z), kernel.dim, r_min, 1.0)
        # |z|^2 K has a constant radial density near 0 for order-one kernels
        dens = polar_integral(lambda z, r: r**2 * kernel.density(a, xi, z), kernel.dim, 0.5 * r_min, r_min)
        inner += 2 * dens  # piece [0, r_min] at the mean density of [r_min/2, r_min]
        outer, ok2 = checked_polar_integral(lambda z, r: kernel.density(a, xi, z), kernel.dim, 1.0, R_MAX)
        outer += power_tail(lambda z: kernel.density(a, xi, z), kernel.dim)
        total = inner + outer
        if not np.isfinite(total):
            converged = False
            continue
        converged &= ok1 and ok2
        worst = max(worst, total)
    passed = bool(converged) and _passes(worst, kernel.C_K, tol)
    return AssumptionReport("K1", worst, kernel.C_K, passed, len(_sample_set(kernel, n_xi)), converged)


def _cone_directions(dim: int, p: np.ndarray, eta: float, order: int = 32):
    if dim == 1:
        return angular_nodes(1)
    theta_p = math.atan2(p[1], p[0])
    half = math.acos(1 - eta)
    x, w = np.polynomial.legendre.leggauss(order)
    thetas, weights = [], []
    for centre in (theta_p, theta_p + math.pi):
        thetas.append(centre + half * x)
        weights.append(half * w)
    th = np.concatenate(thetas)
    return np.stack([np.cos(th), np.sin(th)], -1), np.concatenate(weights)


def check_cone_ellipticity(
    kernel: LevyKernel, p, eta: float, rho: float, n_xi: int = 128, r_min: float | None = None, tol: float = 1e-3
) -> AssumptionReport:
    """Lower bound ``int_{C_{eta,rho}(p)} |z|^2 K dz >= C_K eta^{(d-1)/2} rho``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if not np.linalg.norm(p) > 0:
        raise ValueError("direction p must be nonzero")
    if rho <= 0 or not 0 < eta < 1:
        raise ValueError("need rho > 0 and eta in (0, 1)")
    r_min = min(r_min if r_min is not None else 0.25 / n_xi, rho / 4)
    dirs = _cone_directions(kernel.dim, p, eta)
    lowest, converged = math.inf, True
    for a, xi in _sample_set(kernel, n_xi):
        g = lambda z, r: r**2 * kernel.density(a, xi, z)  # noqa: E731
        val, ok = checked_polar_integral(g, kernel.dim, r_min, rho, dirs)
        val += 2 * polar_integral(g, kernel.dim, 0.5 * r_min, r_min, dirs)
        converged &= ok
        lowest = min(lowest, val)
    threshold = kernel.cone_constant * eta ** ((kernel.dim - 1) / 2) * rho
    passed = bool(converged) and _passes(lowest, threshold, tol, lower=True)
    return AssumptionReport(
        "K2", lowest, threshold, passed, len(_sample_set(kernel, n_xi)), converged, lower_bound=True,
        details={"eta": eta, "rho": rho, "p": p.tolist()},
    )


def torus_distance(x1, x2) -> float:
    d = np.abs(np.atleast_1d(np.asarray(x1, float)) - np.atleast_1d(np.asarray(x2, float)))
    d = np.minimum(d % 1.0, 1.0 - d % 1.0)
    return float(np.linalg.norm(d))


def check_holder_in_xi(kernel: LevyKernel, xi1, xi2, rho: float, r_min: float | None = None, tol: float = 1e-3) -> AssumptionReport:
    """The three Hölder-in-``xi`` integrals of ``|K(xi1, .) - K(xi2, .)|``."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    r_min = min(r_min if r_min is not None else 0.25 / 128, rho / 4)
    dist = torus_distance(xi1, xi2)
    declared = kernel.C_K * dist**kernel.gamma
    d = kernel.dim
    per_control = []
    measured, converged = 0.0, True
    for a in range(kernel.controls):
        diff = lambda z: np.abs(kernel.density(a, xi1, z) - kernel.density(a, xi2, z))  # noqa: E731
        i1, ok1 = checked_polar_integral(lambda z, r: r**2 * diff(z), d, r_min, rho)
        i1 += 2 * polar_integral(lambda z, r: r**2 * diff(z), d, 0.5 * r_min, r_min)
        i2, ok2 = checked_polar_integral(lambda z, r: r * diff(z), d, rho, 1.0)
        i3, ok3 = checked_polar_integral(lambda z, r: diff(z), d, rho, R_MAX)
        i3 += power_tail(diff, d)
        converged &= ok1 and ok2 and ok3
        implied = max(i1 / rho, i2 / abs(math.log(rho)), i3 * rho)
        measured = max(measured, implied)
        per_control.append({"ball": i1, "crown": i2, "outside": i3})
    passed = bool(converged) and _passes(measured, declared, tol)
    return AssumptionReport(
        "K3", measured, declared, passed, kernel.controls, converged,
        details={"rho": rho, "distance": dist, "integrals": per_control},
    )


def _require_factorized(kernel: LevyKernel, what: str):
    if kernel.family != "separable" or kernel.symmetric:
        raise KernelDomainError(f"{what} needs a non-symmetric separable kernel k(xi, z)/|z|^(d+1)")


def modulus_of_continuity(kernel: LevyKernel, a: int, xi, radii: np.ndarray) -> np.ndarray:
    """``sup_{|z|<=r} |k^a(xi, z) - k^a(xi, 0)|`` on increasing ``radii``."""
    dirs, _ = angular_nodes(kernel.dim)
    z = radii[:, None, None] * dirs[None]
    k0 = kernel.factor_at_zero(a, xi)
    dev = np.abs(kernel.factor(a, xi, z) - k0).max(axis=1)
    return np.maximum.accumulate(dev)


def check_modulus_integrability(kernel: LevyKernel, n_xi: int = 128, r_min: float | None = None, n_r: int = 400) -> AssumptionReport:
    """``sup_{a, xi} int_0^1 omega(r) dr / r`` against ``C_K``."""
    _require_factorized(kernel, "check_modulus_integrability")
    r_min = r_min if r_min is not None else 0.25 / n_xi
    radii = np.geomspace(r_min, 1.0, n_r)
    # the last radius is 1 itself, where the modulation switches off
    radii[-1] = 1.0 - 1e-12
    logr = np.log(radii)
    worst = 0.0
    for a, xi in _sample_set(kernel, n_xi):
        om = modulus_of_continuity(kernel, a, xi, radii)
        val = om[0] + float(np.sum(0.5 * (om[1:] + om[:-1]) * np.diff(logr)))
        worst = max(worst, val)
    return AssumptionReport("Kns", float(worst), kernel.C_K, bool(worst <= kernel.C_K), len(_sample_set(kernel, n_xi)))


@dataclass(frozen=True)
class DriftCorrection:
    value: np.ndarray
    error_bound: float


def drift_correction(kernel: LevyKernel, a: int, xi, r_min: float = 0.25 / 128, with_error: bool = False):
    """``b_K^a(xi) = int_B (k^a(xi, z) - k^a(xi, 0)) z / |z|^{d+1} dz``.

    The ball ``|z| < r_min`` is left out of the value; its contribution is at
    most ``omega(r_min)`` times the measure of the unit sphere and goes into
    the error bound instead.
    """
    _require_factorized(kernel, "drift_correction")
    k0 = kernel.factor_at_zero(a, xi)
    d = kernel.dim
    dirs, wdir = angular_nodes(d)
    r, wr = radial_nodes(r_min, 1.0)
    z = r[:, None, None] * dirs[None]
    dk = kernel.factor(a, xi, z) - k0
    # z / |z|^{d+1} * r^{d-1} dr = direction / r dr
    integrand = dk[..., None] * dirs[None] / r[:, None, None]
    val = np.einsum("ijk,i,j->k", integrand, wr, wdir)
    if not np.all(np.isfinite(val)):
        raise QuadratureError("non-finite drift correction")
    # |int_{B_rmin} dk z/|z|^{d+1} dz| <= |S^{d-1}| int_0^rmin omega(r) dr / r, bounded by
    # |S^{d-1}| omega(r_min) when omega grows at least linearly
    err = float(modulus_of_continuity(kernel, a, xi, np.array([r_min]))[0] * wdir.sum())
    if with_error:
        return DriftCorrection(val, err)
    return val


# --------------------------------------------------------------------------
# construction from the JSON kernel block


def kernel_from_spec(spec: dict, dim: int) -> LevyKernel:
    """Build a kernel from ``{"family", "controls", "params", "symmetric", "C_K", "gamma"}``."""
    family = spec["family"]
    m = int(spec.get("controls", 1))
    params = spec.get("params", {})

    def per_control(key, default, single_depth):
        # one entry shared by all controls, or a list with one entry per control
        val = params.get(key, default)
        if _depth(val) == single_depth:
            return [val] * m
        if not isinstance(val, list) or len(val) != m:
            raise ValueError(f"parameter {key!r} needs one entry or one entry per control")
        return val

    kw = dict(
        family=family,
        dim=dim,
        symmetric=bool(spec.get("symmetric", family not in ("half_space",))),
        C_K=float(spec.get("C_K", 10.0)),
        C_K_lower=None if spec.get("C_K_lower") is None else float(spec["C_K_lower"]),
        gamma=float(spec.get("gamma", 1.0)),
        c_K=float(params.get("c_K", 4.0)),
        scale=float(params.get("scale", 1.0)),
        meta={"spec": spec},
    )
    if family == "matrix_anisotropic":
        mats = per_control("matrix", None, 2)
        kw["matrices"] = tuple(
            tuple(tuple(TrigPoly.from_dict(e, dim) for e in row) for row in mat) for mat in mats
        )
    else:
        kw["spatial"] = tuple(TrigPoly.from_dict(s, dim) for s in per_control("spatial", 1.0, 0))
    if family == "angular":
        kw["angular"] = tuple(tuple(float(c) for c in row) for row in per_control("angular", [], 1))
    if family == "separable":
        mods = per_control("modulation", [], 1)
        built = tuple(
            tuple(
                Modulation(t["kind"], tuple(np.atleast_1d(t["coef"]).astype(float)), float(t.get("power", 1.0)))
                for t in terms
            )
            for terms in mods
        )
        kw["modulation"] = built if any(built) else ()
    if family == "half_space":
        kw["axis"] = int(params.get("axis", 0))
    kernel = LevyKernel(**kw)
    if kernel.controls != m:
        raise ValueError(f"kernel declares {m} controls but parameters give {kernel.controls}")
    kernel.validate()
    return kernel


def _depth(val) -> int:
    """List nesting depth; scalars and dicts count as 0."""
    if isinstance(val, list):
        return 1 + (_depth(val[0]) if val else 0)
    return 0


def separable_kernel(spatial: list, dim: int = 1, modulation=None, C_K: float = 10.0, gamma: float = 1.0, symmetric=None) -> LevyKernel:
    """Convenience constructor for the separable family."""
    polys = tuple(s if isinstance(s, TrigPoly) else TrigPoly.from_dict(s, dim) for s in spatial)
    mods = ()
    if modulation:
        mods = tuple(tuple(m) for m in modulation)
    sym = not any(mods) if symmetric is None else symmetric
    return LevyKernel("separable", dim, spatial=polys, modulation=mods, symmetric=sym, C_K=C_K, gamma=gamma)
