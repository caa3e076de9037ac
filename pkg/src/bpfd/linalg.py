"""Krylov solver, tensor-product Laplacian inverse, and Poisson solves.

The 1D interior operator ``K = -D2`` (boundary columns dropped) equals
``M^{-1} S`` with ``M`` the lumped mass and ``S`` symmetric, so it is
diagonalised through the generalized symmetric problem ``S v = lam M v``.
The zero-velocity 2D operator ``sigma I + tau (K_x (+) K_y)`` is then
inverted by two axis transforms.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import Breakdown, DimensionMismatch, IncompatibleRHS, MaxIterExceeded
from .grid import Grid2D
from .operators import ConvDiffOperator, apply_L_full, build_ops_1d, unvec, vec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KrylovConfig:
    rtol: float = 1e-10
    max_iter: int | None = None  # default 10 * sqrt(n)

    def __post_init__(self):
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def iteration_cap(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else max(10, int(10 * math.sqrt(n)))


def bicgstab(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    cfg: KrylovConfig = KrylovConfig(),
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int, float]:
    """Right-preconditioned BiCGSTAB.

    Returns ``(x, iterations, relative_residual)`` with the residual measured on
    the unpreconditioned system. On a breakdown the shadow vector is reset to
    the current residual once; a second breakdown raises :class:`Breakdown`.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if precond is None:
        precond = lambda z: z  # noqa: E731
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if x.shape != b.shape:
        raise DimensionMismatch(f"x0 shape {x.shape} != b shape {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    tol = cfg.rtol * bnorm
    cap = cfg.iteration_cap(n)

    r = b - apply(x) if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    best_x, best_res = x.copy(), rnorm
    if rnorm <= tol:
        return x, 0, rnorm / bnorm

    restarts = 0
    tiny = np.finfo(float).eps ** 2

    def fresh():
        return r.copy(), 1.0, 1.0, 1.0, np.zeros(n), np.zeros(n)

    r_hat, rho, alpha, omega, v, p = fresh()
    it = 0
    while it < cap:
        it += 1
        rho_new = r_hat @ r
        if abs(rho_new) <= tiny * np.linalg.norm(r_hat) * rnorm or omega == 0.0:
            restarts += 1
            if restarts > 1:
                raise Breakdown(f"rho/omega breakdown at iteration {it}")
            log.debug("bicgstab breakdown at iteration %d; resetting shadow vector", it)
            r_hat, rho, alpha, omega, v, p = fresh()
            rho_new = r_hat @ r
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = precond(p)
        v = apply(p_hat)
        denom = r_hat @ v
        if denom == 0.0:
            restarts += 1
            if restarts > 1:
                raise Breakdown(f"(r_hat, v) = 0 at iteration {it}")
            r_hat, rho, alpha, omega, v, p = fresh()
            continue
        alpha = rho / denom
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm <= tol:
            x = x + alpha * p_hat
            return x, it, snorm / bnorm
        s_hat = precond(s)
        t = apply(s_hat)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        if rnorm < best_res:
            best_x, best_res = x.copy(), rnorm
        if rnorm <= tol:
            return x, it, rnorm / bnorm
    raise MaxIterExceeded(best_x, it, best_res / bnorm)


# --------------------------------------------------------------------------
# eigen-structure of the 1D interior operators


@dataclass(frozen=True)
class AxisEigen:
    lam: np.ndarray
    vecs: np.ndarray
    inv: np.ndarray
    mass: np.ndarray


@lru_cache(maxsize=64)
def axis_eigen(n: int, h: float, order: int, bc: str) -> AxisEigen:
    """Eigen-decomposition ``-R D2 = V diag(lam) V^{-1}`` of one axis."""
    ops = build_ops_1d(n, h, order, bc)
    k = ops.interior_stiffness()
    m = ops.mass
    s = m[:, None] * k
    asym = np.max(np.abs(s - s.T))
    if asym > 1e-10 * np.max(np.abs(s)):
        raise np.linalg.LinAlgError(f"mass-weighted stiffness not symmetric (defect {asym:.2e})")
    lam, vecs = sla.eigh(0.5 * (s + s.T), np.diag(m))
    inv = vecs.T * m[None, :]
    return AxisEigen(lam, vecs, inv, m)


class LaplacianPrecond:
    """Inverse of the zero-velocity operator ``sigma I - tau (D2x + D2y)``.

    ``sigma = 1 + s*dt``, ``tau = mu*dt``. :meth:`apply` acts on full-grid
    vectors in vec order; boundary entries pass through unchanged and their
    coupling into the interior is eliminated exactly.
    """

    def __init__(self, grid: Grid2D, mu: float, dt: float, order: int = 4, s: float = 0.0):
        self.grid = grid
        self.order = order
        self.sigma = 1.0 + s * dt
        self.tau = mu * dt
        self.ops_x = build_ops_1d(grid.gx.n, grid.gx.h, order, grid.gx.bc)
        self.ops_y = build_ops_1d(grid.gy.n, grid.gy.h, order, grid.gy.bc)
        self._lu = None
        try:
            self.ex = axis_eigen(grid.gx.n, grid.gx.h, order, grid.gx.bc.value)
            self.ey = axis_eigen(grid.gy.n, grid.gy.h, order, grid.gy.bc.value)
        except np.linalg.LinAlgError as exc:
            warnings.warn(f"eigen-decomposition unusable ({exc}); falling back to sparse LU", stacklevel=2)
            self._lu = spla.splu(self._interior_matrix().tocsc())
        else:
            self.denom = self.sigma + self.tau * (self.ey.lam[:, None] + self.ex.lam[None, :])

    def _interior_matrix(self) -> sp.csr_matrix:
        kx = sp.csr_matrix(self.ops_x.interior_stiffness())
        ky = sp.csr_matrix(self.ops_y.interior_stiffness())
        ny, nx = self.grid.interior_shape
        return (self.sigma * sp.identity(nx * ny)
                + self.tau * (sp.kron(kx, sp.identity(ny)) + sp.kron(sp.identity(nx), ky))).tocsr()

    def solve_interior(self, rhs: np.ndarray, zero_mode: bool = False) -> np.ndarray:
        """Solve ``sigma X + tau (K_y X + X K_x^T) = rhs`` on interior arrays.

        With ``zero_mode`` the (near-)singular constant mode is dropped instead
        of divided by zero; only meaningful when ``sigma == 0``.
        """
        if self._lu is not None:
            return unvec(self._lu.solve(vec(rhs)), rhs.shape)
        ex, ey = self.ex, self.ey
        hat = ey.inv @ rhs @ ex.inv.T
        denom = self.denom
        if zero_mode:
            small = np.abs(denom) <= 1e-10 * np.max(np.abs(denom))
            denom = np.where(small, np.inf, denom)
        return ey.vecs @ (hat / denom) @ ex.vecs.T

    def _boundary_coupling(self, ring: np.ndarray) -> np.ndarray:
        g = self.grid
        rows = ring[g.gy.interior, :]
        cols = ring[:, g.gx.interior]
        return self.tau * (self.ops_x.apply_d2(rows, axis=1) + self.ops_y.apply_d2(cols, axis=0))

    def apply(self, b: np.ndarray) -> np.ndarray:
        g = self.grid
        b_full = unvec(b, g.shape)
        x = b_full.copy()
        interior = g.interior
        rhs = b_full[interior]
        if not (g.gx.periodic and g.gy.periodic):
            ring = b_full.copy()
            ring[interior] = 0.0
            rhs = rhs + self._boundary_coupling(ring)
        x[interior] = self.solve_interior(rhs)
        return vec(x)

    __call__ = apply

    def forward(self, x: np.ndarray) -> np.ndarray:
        """The zero-velocity full-grid operator itself (for checks)."""
        g = self.grid
        op = ConvDiffOperator(g, self.order, mu=self.tau, dt=1.0, s=self.sigma - 1.0)
        return vec(apply_L_full(op, unvec(x, g.shape)))


def build_laplacian_precond(grid: Grid2D, mu: float, dt: float, order: int = 4, s: float = 0.0) -> LaplacianPrecond:
    return LaplacianPrecond(grid, mu, dt, order, s)


# --------------------------------------------------------------------------
# Poisson


@lru_cache(maxsize=16)
def _poisson_inverse(grid: Grid2D, order: int) -> LaplacianPrecond:
    # sigma = 0, tau = 1: pure (negative) Laplacian
    p = LaplacianPrecond.__new__(LaplacianPrecond)
    p.grid, p.order, p.sigma, p.tau = grid, order, 0.0, 1.0
    p.ops_x = build_ops_1d(grid.gx.n, grid.gx.h, order, grid.gx.bc)
    p.ops_y = build_ops_1d(grid.gy.n, grid.gy.h, order, grid.gy.bc)
    p._lu = None
    p.ex = axis_eigen(grid.gx.n, grid.gx.h, order, grid.gx.bc.value)
    p.ey = axis_eigen(grid.gy.n, grid.gy.h, order, grid.gy.bc.value)
    p.denom = p.ey.lam[:, None] + p.ex.lam[None, :]
    return p


def weighted_mean(values: np.ndarray, grid: Grid2D, order: int) -> float:
    """Quadrature (lumped-mass) mean of interior nodal values."""
    mx = build_ops_1d(grid.gx.n, grid.gx.h, order, grid.gx.bc).mass
    my = build_ops_1d(grid.gy.n, grid.gy.h, order, grid.gy.bc).mass
    w = my[:, None] * mx[None, :]
    return float(np.sum(w * values) / np.sum(w))


def poisson_solve(omega: np.ndarray, grid: Grid2D, order: int = 4, project: bool = False) -> np.ndarray:
    """Solve the discrete ``lap(psi) = omega``; returns the full field ``psi_bar``.

    Dirichlet axes carry homogeneous boundary values. On a fully periodic
    grid the right-hand side must have zero quadrature mean (it is removed
    first when ``project`` is set) and ``psi`` is returned with zero mean.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.shape != grid.interior_shape:
        raise DimensionMismatch(f"omega shape {omega.shape} != interior shape {grid.interior_shape}")
    periodic = grid.gx.periodic and grid.gy.periodic
    if grid.gx.periodic != grid.gy.periodic:
        raise NotImplementedError("mixed periodic/Dirichlet Poisson solves are not supported")
    solver = _poisson_inverse(grid, order)
    rhs = -omega
    if periodic:
        wm = weighted_mean(omega, grid, order)
        scale = max(float(np.max(np.abs(omega))), np.finfo(float).tiny)
        if abs(wm) > 1e-12 * scale:
            if not project:
                raise IncompatibleRHS(f"periodic right-hand side has mean {wm:.3e}")
            rhs = -(omega - wm)
    psi = solver.solve_interior(rhs, zero_mode=periodic)
    if periodic:
        return psi - psi.mean()
    out = np.zeros(grid.shape)
    out[grid.interior] = psi
    return out


def discrete_laplacian(psi_bar: np.ndarray, grid: Grid2D, order: int = 4) -> np.ndarray:
    """``R_y psi D2x^T + D2y psi R_x^T`` at interior points."""
    ox = build_ops_1d(grid.gx.n, grid.gx.h, order, grid.gx.bc)
    oy = build_ops_1d(grid.gy.n, grid.gy.h, order, grid.gy.bc)
    rows = psi_bar[grid.gy.interior, :]
    cols = psi_bar[:, grid.gx.interior]
    return ox.apply_d2(rows, axis=1) + oy.apply_d2(cols, axis=0)


# --------------------------------------------------------------------------
# system solvers used by the time integrators


class DirectSolver:
    """Sparse LU of the assembled operator, reused while the operator is unchanged.

    Factorizations are keyed by operator identity; the few most recent are kept
    so that startup steps with a different ``dt`` do not evict the main one.
    """

    name = "direct"

    def __init__(self, keep: int = 4):
        self.keep = keep
        self._cache: list = []
        self.last_iterations = 0

    def _factor(self, op: ConvDiffOperator):
        for key, lu in self._cache:
            if key is op:
                return lu
        lu = spla.splu(op.matrix().tocsc())
        self._cache = ([(op, lu)] + self._cache)[: self.keep]
        return lu

    def solve(self, op: ConvDiffOperator, rhs_full: np.ndarray, x0=None) -> np.ndarray:
        self.last_iterations = 0
        return unvec(self._factor(op).solve(vec(rhs_full)), rhs_full.shape)


class KrylovSolver:
    """Matrix-free BiCGSTAB preconditioned by the zero-velocity inverse."""

    name = "bicgstab"

    def __init__(self, cfg: KrylovConfig = KrylovConfig(), precondition: bool = True):
        self.cfg = cfg
        self.precondition = precondition
        self._pre: dict = {}
        self.last_iterations = 0
        self.last_residual = 0.0

    def _precond(self, op: ConvDiffOperator):
        key = (op.grid, op.order, op.mu, op.dt, op.s)
        if key not in self._pre:
            if len(self._pre) > 8:
                self._pre.clear()
            self._pre[key] = LaplacianPrecond(op.grid, op.mu, op.dt, op.order, op.s)
        return self._pre[key]

    def solve(self, op: ConvDiffOperator, rhs_full: np.ndarray, x0=None) -> np.ndarray:
        shape = rhs_full.shape
        apply = lambda z: vec(apply_L_full(op, unvec(z, shape)))  # noqa: E731
        pre = self._precond(op) if self.precondition and op.is_2d else None
        guess = None if x0 is None else vec(x0)
        x, its, res = bicgstab(apply, vec(rhs_full), pre, self.cfg, guess)
        self.last_iterations, self.last_residual = its, res
        return unvec(x, shape)


def make_solver(kind: str = "direct", rtol: float = 1e-10):
    if kind == "direct":
        return DirectSolver()
    if kind == "bicgstab":
        return KrylovSolver(KrylovConfig(rtol=rtol))
    raise ValueError(f"unknown solver {kind!r}")
