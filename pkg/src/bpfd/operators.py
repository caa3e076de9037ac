"""Difference matrices and the convection-diffusion scheme operator.

The 1D matrices are stored *unscaled* (entries are dyadic rationals) and
the ``1/h`` or ``1/h**2`` factor is applied after the stencil sum. Because
every stencil row sums to exactly zero in floating point, the matrix-free
operator maps constants to constants without round-off.

Vectorisation of 2D fields follows the column-by-column convention:
``vec(A) = A.ravel(order="F")``, so the flat index of grid point
``(i, j)`` (column ``i``, row ``j``) is ``j + i * ny_stored``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DimensionMismatch, GridError
from .grid import BC, Grid1D, Grid2D

# Unscaled stencils as {offset: coefficient}. "mid" rows sit at element
# midpoints (odd index), "end" rows at element ends (even index).
_D1_MID = {-1: -0.5, 1: 0.5}
_D1_END = {-2: 0.25, -1: -1.0, 1: 1.0, 2: -0.25}
_D2_MID = {-1: 1.0, 0: -2.0, 1: 1.0}
_D2_END = {-2: -0.25, -1: 2.0, 0: -3.5, 1: 2.0, 2: -0.25}


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).ravel(order="F")


def unvec(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.asarray(x).reshape(shape, order="F")


@dataclass(frozen=True)
class DifferenceOperators1D:
    """First/second derivative matrices of shape ``n x size``.

    ``d1``/``d2`` are scaled; ``d1_unscaled``/``d2_unscaled`` hold the
    stencil numerators so that ``d1 = d1_unscaled / h`` and
    ``d2 = d2_unscaled / h**2``. ``mass`` is the lumped mass diagonal
    of the interior rows (Simpson weights for order 4).
    """

    order: int
    h: float
    bc: BC
    d1_unscaled: sp.csr_matrix
    d2_unscaled: sp.csr_matrix
    r: sp.csr_matrix
    mass: np.ndarray

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @cached_property
    def d1(self) -> sp.csr_matrix:
        return (self.d1_unscaled / self.h).tocsr()

    @cached_property
    def d2(self) -> sp.csr_matrix:
        return (self.d2_unscaled / self.h**2).tocsr()

    def apply_d1(self, f: np.ndarray, axis: int = 0) -> np.ndarray:
        return _apply_along(self.d1_unscaled, f, axis) / self.h

    def apply_d2(self, f: np.ndarray, axis: int = 0) -> np.ndarray:
        return _apply_along(self.d2_unscaled, f, axis) / self.h**2

    def restrict(self, f: np.ndarray, axis: int = 0) -> np.ndarray:
        if self.bc is BC.PERIODIC:
            return f
        idx = [slice(None)] * f.ndim
        idx[axis] = slice(1, -1)
        return f[tuple(idx)]

    def interior_stiffness(self) -> np.ndarray:
        """Dense ``n x n`` matrix ``-D2`` with boundary columns dropped."""
        d2 = self.d2.toarray()
        if self.bc is BC.DIRICHLET:
            d2 = d2[:, 1:-1]
        return -d2


def _apply_along(mat: sp.csr_matrix, f: np.ndarray, axis: int) -> np.ndarray:
    if axis == 0:
        return mat @ f
    return (mat @ np.swapaxes(f, 0, axis)).swapaxes(0, axis)


def build_ops_1d(n: int, h: float, order: int = 4, bc: BC | str = BC.DIRICHLET) -> DifferenceOperators1D:
    """Assemble the 1D difference matrices of the Q2 (order 4) or P1 (order 2) scheme."""
    bc = BC(bc)
    if order not in (2, 4):
        raise GridError(f"order must be 2 or 4, got {order}")
    if order == 4:
        if bc is BC.DIRICHLET and n % 2 == 0:
            raise GridError(f"order 4 with Dirichlet BC needs odd n, got {n}")
        if bc is BC.PERIODIC and (n % 2 or n < 4):
            raise GridError(f"order 4 with periodic BC needs even n >= 4, got {n}")
    elif bc is BC.PERIODIC and n < 3:
        raise GridError(f"periodic grid needs n >= 3, got {n}")

    periodic = bc is BC.PERIODIC
    size = n if periodic else n + 2
    first = 0 if periodic else 1
    rows1, cols1, vals1 = [], [], []
    rows2, cols2, vals2 = [], [], []
    mass = np.empty(n)
    for r in range(n):
        i = first + r
        end_row = order == 4 and i % 2 == 0
        s1 = _D1_END if end_row else _D1_MID
        s2 = _D2_END if end_row else _D2_MID
        for off, c in s1.items():
            rows1.append(r)
            cols1.append((i + off) % size if periodic else i + off)
            vals1.append(c)
        for off, c in s2.items():
            rows2.append(r)
            cols2.append((i + off) % size if periodic else i + off)
            vals2.append(c)
        if order == 4:
            mass[r] = h * (2.0 / 3.0 if end_row else 4.0 / 3.0)
        else:
            mass[r] = h
    d1 = sp.csr_matrix((vals1, (rows1, cols1)), shape=(n, size))
    d2 = sp.csr_matrix((vals2, (rows2, cols2)), shape=(n, size))
    if periodic:
        r_mat = sp.identity(n, format="csr")
    else:
        r_mat = sp.eye(n, size, k=1, format="csr")
    return DifferenceOperators1D(order, h, bc, d1, d2, r_mat, mass)


def ops_for(grid: Grid1D, order: int) -> DifferenceOperators1D:
    return build_ops_1d(grid.n, grid.h, order, grid.bc)


def neumann_ops_1d(n: int, h: float) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Square ``(n+2) x (n+2)`` order-4 matrices for homogeneous Neumann data.

    Only the boundary rows differ from the Dirichlet matrices: one-sided
    ``(-3, 4, -1)/(2h)`` for the first derivative and ``-(7/2, -4, 1/2)/h**2``
    for the second. Kept as a fixture for row-sum checks.
    """
    ops = build_ops_1d(n, h, 4, BC.DIRICHLET)
    size = n + 2
    d1 = sp.lil_matrix((size, size))
    d2 = sp.lil_matrix((size, size))
    d1[1:-1, :] = ops.d1_unscaled
    d2[1:-1, :] = ops.d2_unscaled
    d1[0, :3] = [-1.5, 2.0, -0.5]
    d1[-1, -3:] = [0.5, -2.0, 1.5]
    d2[0, :3] = [-3.5, 4.0, -0.5]
    d2[-1, -3:] = [-0.5, 4.0, -3.5]
    return (d1.tocsr() / h).tocsr(), (d2.tocsr() / h**2).tocsr()


@dataclass
class VelocityField:
    """Nodal velocity on the interior points (``v`` is None in 1D)."""

    u: np.ndarray
    v: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float)

    @property
    def max_norm(self) -> float:
        m = float(np.max(np.abs(self.u))) if self.u.size else 0.0
        if self.v is not None and self.v.size:
            m = max(m, float(np.max(np.abs(self.v))))
        return m

    @classmethod
    def zero(cls, shape) -> "VelocityField":
        if isinstance(shape, int):
            return cls(np.zeros(shape))
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class FieldState:
    """Nodal values including the Dirichlet boundary ring (none when periodic)."""

    values: np.ndarray
    grid: Grid2D | Grid1D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.shape if isinstance(self.grid, Grid2D) else (self.grid.size,)
        if self.values.shape != expected:
            raise DimensionMismatch(f"field shape {self.values.shape} != grid shape {expected}")

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def copy(self) -> "FieldState":
        return FieldState(self.values.copy(), self.grid)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass
class ConvDiffOperator:
    """Implicit operator ``(1 + s*dt) phi + dt*(u.grad(phi) - mu*lap_h(phi))``.

    With ``dt = 1, s = 0`` this is the steady operator; backward Euler,
    IMEX and stabilized IMEX steps are all instances. ``grid`` may be
    1D or 2D; ``velocity`` holds interior nodal values.
    """

    grid: Grid2D | Grid1D
    order: int = 4
    mu: float = 1.0
    dt: float = 1.0
    velocity: VelocityField | None = None
    s: float = 0.0
    _matrix: sp.csr_matrix | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.s < 0:
            raise ValueError(f"s must be nonnegative, got {self.s}")
        if isinstance(self.grid, Grid2D):
            self.ops_x = ops_for(self.grid.gx, self.order)
            self.ops_y = ops_for(self.grid.gy, self.order)
            shape = self.grid.interior_shape
        else:
            self.ops_x = ops_for(self.grid, self.order)
            self.ops_y = None
            shape = self.grid.n
        if self.velocity is None:
            self.velocity = VelocityField.zero(shape)
        u_shape = np.shape(self.velocity.u)
        if u_shape != (shape if isinstance(shape, tuple) else (shape,)):
            raise DimensionMismatch(f"velocity shape {u_shape} does not match interior {shape}")

    @property
    def is_2d(self) -> bool:
        return self.ops_y is not None

    @property
    def mass_coefficient(self) -> float:
        return 1.0 + self.s * self.dt

    @property
    def c(self) -> float:
        """Dimensionless ``h**2 / (mu*dt)``."""
        h = self.grid.h
        return h * h / (self.mu * self.dt)

    def replace(self, **changes) -> "ConvDiffOperator":
        kw = dict(grid=self.grid, order=self.order, mu=self.mu, dt=self.dt,
                  velocity=self.velocity, s=self.s)
        kw.update(changes)
        return ConvDiffOperator(**kw)

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            self._matrix = assemble_matrix(self)
        return self._matrix


def apply_L(op: ConvDiffOperator, phi_bar) -> np.ndarray:
    """Apply the scheme operator to a full field; returns interior values."""
    phi_bar = np.asarray(phi_bar, dtype=float)
    grid = op.grid
    vel = op.velocity
    if op.is_2d:
        if phi_bar.shape != grid.shape:
            raise DimensionMismatch(f"field shape {phi_bar.shape} != grid shape {grid.shape}")
        ox, oy = op.ops_x, op.ops_y
        rows = phi_bar[grid.gy.interior, :]
        cols = phi_bar[:, grid.gx.interior]
        phi = rows[:, grid.gx.interior]
        dx1 = ox.apply_d1(rows, axis=1)
        dy1 = oy.apply_d1(cols, axis=0)
        dxx = ox.apply_d2(rows, axis=1)
        dyy = oy.apply_d2(cols, axis=0)
        transport = vel.u * dx1 + vel.v * dy1 - op.mu * (dxx + dyy)
    else:
        if phi_bar.shape != (grid.size,):
            raise DimensionMismatch(f"field length {phi_bar.shape} != {grid.size}")
        ox = op.ops_x
        phi = phi_bar[grid.interior]
        transport = vel.u * ox.apply_d1(phi_bar) - op.mu * ox.apply_d2(phi_bar)
    return op.mass_coefficient * phi + op.dt * transport


def apply_L_full(op: ConvDiffOperator, phi_bar) -> np.ndarray:
    """Full-grid operator: scheme rows at interior points, identity on the boundary."""
    out = np.array(phi_bar, dtype=float, copy=True)
    out[op.grid.interior] = apply_L(op, phi_bar)
    return out


def assemble_matrix(op: ConvDiffOperator) -> sp.csr_matrix:
    """Sparse matrix of the full-grid operator in ``vec`` (column-major) order."""
    vel = op.velocity
    dt, mu = op.dt, op.mu
    if op.is_2d:
        ox, oy = op.ops_x, op.ops_y
        rx, ry = ox.r, oy.r
        sel = sp.kron(rx, ry, format="csr")
        interior = (
            op.mass_coefficient * sel
            + dt * sp.diags(vec(vel.u)) @ sp.kron(ox.d1, ry)
            + dt * sp.diags(vec(vel.v)) @ sp.kron(rx, oy.d1)
            - dt * mu * (sp.kron(ox.d2, ry) + sp.kron(rx, oy.d2))
        )
    else:
        ox = op.ops_x
        sel = ox.r
        interior = (
            op.mass_coefficient * sel
            + dt * sp.diags(vel.u) @ ox.d1
            - dt * mu * ox.d2
        )
    size = sel.shape[1]
    boundary = sp.identity(size, format="csr") - sel.T @ sel
    full = sel.T @ interior + boundary
    full = sp.csr_matrix(full)
    full.eliminate_zeros()
    full.sort_indices()
    return full


def export_matrix_market(a: sp.spmatrix, path: str | Path, comment: str = "") -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(a), comment=comment)
    return path if path.suffix else path.with_suffix(".mtx")


def fourth_order_derivative(f_bar: np.ndarray, grid: Grid2D, axis: str) -> np.ndarray:
    """Conventional 5-point fourth-order first derivative at interior points.

    Periodic axes wrap; Dirichlet axes use the stored boundary ring and the
    standard biased stencil ``(-3, -10, 18, -6, 1)/(12h)`` next to the wall.
    """
    return _derivative(f_bar, grid, axis, fourth=True)


def central_derivative(f_bar: np.ndarray, grid: Grid2D, axis: str) -> np.ndarray:
    """Second-order centred first derivative at interior points."""
    return _derivative(f_bar, grid, axis, fourth=False)


def _derivative(f_bar, grid: Grid2D, axis: str, fourth: bool) -> np.ndarray:
    f_bar = np.asarray(f_bar, dtype=float)
    if f_bar.shape != grid.shape:
        raise DimensionMismatch(f"field shape {f_bar.shape} != grid shape {grid.shape}")
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    ax = 1 if axis == "x" else 0
    g = grid.gx if axis == "x" else grid.gy
    other = grid.gy if axis == "x" else grid.gx
    f = np.swapaxes(f_bar, 0, ax)
    f = f[:, other.interior]  # restrict the transverse direction
    h = g.h
    if g.periodic:
        if fourth:
            d = (np.roll(f, 2, 0) - 8 * np.roll(f, 1, 0) + 8 * np.roll(f, -1, 0) - np.roll(f, -2, 0)) / (12 * h)
        else:
            d = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * h)
    else:
        n = g.n
        if not fourth:
            d = (f[2:] - f[:-2]) / (2 * h)
        else:
            if n < 4:
                raise GridError("fourth-order derivative on a Dirichlet axis needs n >= 4")
            d = np.empty((n,) + f.shape[1:])
            d[1:-1] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
            d[0] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
            d[-1] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return np.swapaxes(d, 0, ax)
