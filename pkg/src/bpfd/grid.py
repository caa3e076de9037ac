"""Uniform 1D/2D grids and the Q2 point classification.

Every Q2 element spans three grid points per axis, so a point's role is
decided by index parity: even indices are element ends (knots in 2D),
odd indices are element midpoints. Arrays are laid out with rows indexed
by ``y`` (index ``j``) and columns by ``x`` (index ``i``).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GridError


class BC(str, enum.Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


class PointClass(enum.Enum):
    BOUNDARY = "boundary"
    CELL_CENTER = "cell_center"
    EDGE_CENTER_X = "edge_center_x"  # edge parallel to the x-axis: i odd, j even
    EDGE_CENTER_Y = "edge_center_y"  # edge parallel to the y-axis: i even, j odd
    KNOT = "knot"


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[a, b]``.

    For Dirichlet grids ``n`` counts interior points and nodes are
    ``a + i*h`` for ``i = 0..n+1``. For periodic grids ``n`` is the number
    of points in one period and nodes are ``a + i*h`` for ``i = 0..n-1``.
    """

    n: int
    a: float = 0.0
    b: float = 1.0
    bc: BC = BC.DIRICHLET

    def __post_init__(self):
        object.__setattr__(self, "bc", BC(self.bc))
        if self.n < 1:
            raise GridError(f"n must be positive, got {self.n}")
        if not self.b > self.a:
            raise GridError(f"empty domain [{self.a}, {self.b}]")

    @property
    def periodic(self) -> bool:
        return self.bc is BC.PERIODIC

    @property
    def h(self) -> float:
        length = self.b - self.a
        return length / self.n if self.periodic else length / (self.n + 1)

    @property
    def size(self) -> int:
        """Number of stored nodes (boundary included)."""
        return self.n if self.periodic else self.n + 2

    @property
    def n_elements(self) -> int:
        """Number of quadratic elements, ``N = (n+1)/2`` for Dirichlet grids."""
        return self.n // 2 if self.periodic else (self.n + 1) // 2

    @property
    def interior(self) -> slice:
        return slice(None) if self.periodic else slice(1, -1)

    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.size)

    def interior_nodes(self) -> np.ndarray:
        return self.nodes()[self.interior]

    def is_boundary(self, i: int) -> bool:
        return not self.periodic and i in (0, self.n + 1)


def gauss_lobatto_nodes(grid: Grid1D) -> np.ndarray:
    """Grid coordinates; these coincide with the 3-point Gauss-Lobatto
    points of the quadratic elements ``[x_{2k}, x_{2k+2}]``."""
    return grid.nodes()


@dataclass(frozen=True)
class Grid2D:
    gx: Grid1D
    gy: Grid1D

    def __post_init__(self):
        if not math.isclose(self.gx.h, self.gy.h, rel_tol=1e-12):
            warnings.warn(
                f"unequal spacings dx={self.gx.h:.6g}, dy={self.gy.h:.6g}: "
                "monotonicity certificates assume dx == dy",
                stacklevel=3,
            )

    @classmethod
    def square(cls, n: int, a: float = 0.0, b: float = 1.0, bc: BC | str = BC.DIRICHLET) -> "Grid2D":
        g = Grid1D(n, a, b, BC(bc))
        return cls(g, g)

    @property
    def shape(self) -> tuple[int, int]:
        """Full array shape ``(ny_stored, nx_stored)``."""
        return (self.gy.size, self.gx.size)

    @property
    def interior_shape(self) -> tuple[int, int]:
        return (self.gy.n, self.gx.n)

    @property
    def interior(self) -> tuple[slice, slice]:
        return (self.gy.interior, self.gx.interior)

    @property
    def h(self) -> float:
        """Common spacing; raises if dx != dy."""
        if not math.isclose(self.gx.h, self.gy.h, rel_tol=1e-12):
            raise GridError("dx != dy; no common spacing")
        return self.gx.h

    @property
    def uniform_spacing(self) -> bool:
        return math.isclose(self.gx.h, self.gy.h, rel_tol=1e-12)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.gx.nodes(), self.gy.nodes())

    def interior_meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.gx.interior_nodes(), self.gy.interior_nodes())

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if not self.gy.periodic:
            mask[[0, -1], :] = True
        if not self.gx.periodic:
            mask[:, [0, -1]] = True
        return mask


def classify(grid: Grid2D, i: int, j: int) -> PointClass:
    """Class of the point with column index ``i`` (x) and row index ``j`` (y)."""
    nx, ny = grid.gx.size, grid.gy.size
    if not (0 <= i < nx and 0 <= j < ny):
        raise GridError(f"index ({i}, {j}) outside grid of shape {grid.shape}")
    if grid.gx.is_boundary(i) or grid.gy.is_boundary(j):
        return PointClass.BOUNDARY
    return _parity_class(i % 2, j % 2)


def _parity_class(pi: int, pj: int) -> PointClass:
    if pi and pj:
        return PointClass.CELL_CENTER
    if not pi and not pj:
        return PointClass.KNOT
    return PointClass.EDGE_CENTER_X if pi else PointClass.EDGE_CENTER_Y


def classify_all(grid: Grid2D) -> np.ndarray:
    """Object array of :class:`PointClass` over the full grid."""
    out = np.empty(grid.shape, dtype=object)
    for j in range(grid.gy.size):
        for i in range(grid.gx.size):
            out[j, i] = classify(grid, i, j)
    return out
