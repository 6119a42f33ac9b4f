"""Periodic torus grids and grid functions.

Everything lives on the unit torus ``[0, 1)^d`` with ``d`` in {1, 2}. A grid
function is an immutable snapshot of nodal values; every operation returns a
fresh object.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Two objects were expected to live on the same grid."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``n`` points per axis on the unit torus."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise ValueError(f"need at least 8 points per axis, got {self.n}")

    @property
    def spacing(self) -> Fraction:
        return Fraction(1, self.n)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        axes = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def flat_nodes(self) -> np.ndarray:
        return self.nodes().reshape(-1, self.dim)

    def wrap_index(self, idx: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(i) % self.n for i in idx)

    def node(self, idx: Sequence[int]) -> np.ndarray:
        return np.array(self.wrap_index(idx), dtype=float) / self.n

    def function(self, values) -> "GridFunction":
        return GridFunction(self, values)

    def from_callable(self, fn) -> "GridFunction":
        """Sample ``fn(points)`` where ``points`` has shape ``(*shape, dim)``."""
        return GridFunction(self, fn(self.nodes()))

    def constant(self, c: float) -> "GridFunction":
        return GridFunction(self, np.full(self.shape, float(c)))


class GridFunction:
    """Real values sampled on a :class:`TorusGrid`; read-only after construction."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        arr = np.array(values, dtype=float)
        if arr.size != grid.size:
            raise GridMismatchError(f"expected {grid.size} values, got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid function values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    def __repr__(self):
        return f"GridFunction(dim={self.grid.dim}, n={self.grid.n}, sup={self.sup_norm():.4g})"

    def _check(self, other: "GridFunction"):
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - float(other))

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def __call__(self, point) -> float:
        return sample_at(self, point)

    def to_csv(self) -> str:
        return to_csv(self)


def upwind_gradient(gf: GridFunction, drift) -> np.ndarray:
    """One-sided differences chosen against the sign of ``drift``.

    ``drift`` is the advection velocity ``v`` of ``u_t + v . Du = 0``: a
    positive component selects the backward difference, a negative one the
    forward difference and an exact zero the centered difference. ``drift``
    may be a constant vector or an array of shape ``(dim, *grid.shape)``
    (``grid.shape`` alone is accepted in 1D).

    Returns an array of shape ``(dim, *grid.shape)``.
    """
    grid = gf.grid
    v = np.asarray(drift, dtype=float)
    if v.ndim == 0:
        v = np.full(grid.dim, float(v))
    if v.shape == (grid.dim,):
        v = np.broadcast_to(v.reshape((grid.dim,) + (1,) * grid.dim), (grid.dim,) + grid.shape)
    elif v.shape == grid.shape and grid.dim == 1:
        v = v[None]
    elif v.shape != (grid.dim,) + grid.shape:
        raise GridMismatchError(f"drift shape {v.shape} does not match grid {grid.shape}")
    fwd, bwd = one_sided_differences(gf.values, grid.h)
    centered = 0.5 * (fwd + bwd)
    return np.where(v > 0, bwd, np.where(v < 0, fwd, centered))


def one_sided_differences(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward periodic differences, each ``(dim, *shape)``."""
    dim = values.ndim
    fwd = np.stack([(np.roll(values, -1, axis=ax) - values) / h for ax in range(dim)])
    bwd = np.stack([(values - np.roll(values, 1, axis=ax)) / h for ax in range(dim)])
    return fwd, bwd


def second_differences(values: np.ndarray, h: float) -> np.ndarray:
    """Centered second-difference Hessian, shape ``(dim, dim, *shape)``."""
    dim = values.ndim
    out = np.empty((dim, dim) + values.shape)
    for i in range(dim):
        out[i, i] = (np.roll(values, -1, i) - 2 * values + np.roll(values, 1, i)) / h**2
        for j in range(i + 1, dim):
            pp = np.roll(np.roll(values, -1, i), -1, j)
            mm = np.roll(np.roll(values, 1, i), 1, j)
            pm = np.roll(np.roll(values, -1, i), 1, j)
            mp = np.roll(np.roll(values, 1, i), -1, j)
            out[i, j] = out[j, i] = (pp + mm - pm - mp) / (4 * h**2)
    return out


def lipschitz_seminorm(gf: GridFunction) -> float:
    """Largest nearest-neighbour slope, periodic wrap included."""
    v = gf.values
    return max(float(np.max(np.abs(np.roll(v, -1, ax) - v))) for ax in range(v.ndim)) / gf.grid.h


def interpolate(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of nodal ``values`` at ``points``.

    ``points`` has shape ``(..., dim)`` in torus coordinates (any real).
    """
    n = values.shape[0]
    dim = values.ndim
    pts = np.asarray(points, dtype=float)
    s = np.mod(pts, 1.0) * n
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64) % n
    if dim == 1:
        i0 = base[..., 0]
        t = frac[..., 0]
        return (1 - t) * values[i0] + t * values[(i0 + 1) % n]
    i0, j0 = base[..., 0], base[..., 1]
    tx, ty = frac[..., 0], frac[..., 1]
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    return (
        (1 - tx) * (1 - ty) * values[i0, j0]
        + tx * (1 - ty) * values[i1, j0]
        + (1 - tx) * ty * values[i0, j1]
        + tx * ty * values[i1, j1]
    )


def sample_at(gf: GridFunction, point) -> float:
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    if pt.shape != (gf.grid.dim,):
        raise ValueError(f"point must have {gf.grid.dim} coordinates")
    return float(interpolate(gf.values, pt[None])[0])


def sup_norm_diff(f: GridFunction, g: GridFunction, sample_points: Iterable) -> float:
    """Largest interpolated difference over ``sample_points``."""
    pts = np.asarray(list(sample_points), dtype=float)
    if pts.size == 0:
        raise ValueError("sample_points must be nonempty")
    if f.grid.dim != g.grid.dim:
        raise GridMismatchError("dimension mismatch")
    pts = pts.reshape(-1, f.grid.dim)
    return float(np.max(np.abs(interpolate(f.values, pts) - interpolate(g.values, pts))))


def sample_lattice(dim: int, per_axis: int = 16) -> np.ndarray:
    ax = np.arange(per_axis) / per_axis
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim)


def to_csv(gf: GridFunction) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"index_{k}" for k in range(gf.grid.dim)] + ["value"])
    for idx in np.ndindex(*gf.grid.shape):
        w.writerow(list(idx) + [repr(float(gf.values[idx]))])
    return buf.getvalue()


def from_csv(text: str) -> GridFunction:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    dim = len(header) - 1
    if header != [f"index_{k}" for k in range(dim)] + ["value"]:
        raise ValueError(f"unexpected CSV header {header}")
    n = round(len(body) ** (1.0 / dim))
    grid = TorusGrid(dim, n)
    vals = np.empty(grid.shape)
    for row in body:
        vals[tuple(int(c) for c in row[:dim])] = float(row[dim])
    return GridFunction(grid, vals)
