"""Machine verification of inverse positivity for the scheme matrix.

The engine works on ``A = c * L`` with ``c = h**2 / (mu*dt)``. The negative
off-diagonal part of ``A`` is split as ``A^z + A^s``: couplings of a row
along an axis in which the row sits at an element end (even index) go to
``A^z``, couplings along an axis in which it sits at an element midpoint go
to ``A^s``. Inverse positivity then follows from

1. ``A_d + A^z`` being a nonsingular M-matrix (positive row sums after the
   diagonal scaling returned by :func:`default_scaling`), and
2. ``A_a^+ <= A^z A_d^{-1} A^s`` entrywise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SignConditionViolated, SignPatternViolated, SingularMatrix
from .grid import Grid1D, Grid2D

SQRT37_BOUND = (math.sqrt(37.0) - 5.0) / 4.0
SQRT201_BOUND = (math.sqrt(201.0) - 11.0) / 16.0
SQRT217_BOUND = (math.sqrt(217.0) - 13.0) / 8.0

ROW_SUM_FLOOR = 1e-14
PRODUCT_SLACK = 1e-14
DENSE_LIMIT = 4096


# --------------------------------------------------------------------------
# grid geometry in vec order


def _axes(grid: Grid1D | Grid2D) -> list[tuple[np.ndarray, int, bool]]:
    """Per-axis (index of every flat point, stored length, periodic)."""
    if isinstance(grid, Grid1D):
        return [(np.arange(grid.size), grid.size, grid.periodic)]
    ny, nx = grid.shape
    k = np.arange(nx * ny)
    return [(k // ny, nx, grid.gx.periodic), (k % ny, ny, grid.gy.periodic)]


def _displacement(p_idx, q_idx, length, periodic):
    d = q_idx - p_idx
    if periodic:
        d = (d + length // 2) % length - length // 2
    return d


def _boundary_flags(grid: Grid1D | Grid2D) -> np.ndarray:
    if isinstance(grid, Grid1D):
        flags = np.zeros(grid.size, dtype=bool)
        if not grid.periodic:
            flags[[0, -1]] = True
        return flags
    return grid.boundary_mask().ravel(order="F")


def default_scaling(grid: Grid1D | Grid2D, order: int = 4) -> np.ndarray:
    """Positive diagonal ``D`` for which ``(A_d + A^z) D`` has positive row sums.

    Order 4, 1D: 1/2 at element midpoints, 1 elsewhere. Order 4, 2D: 3/4 at
    interior edge centres, 1 elsewhere. Order 2: identity.
    """
    axes = _axes(grid)
    n = axes[0][0].size
    d = np.ones(n)
    if order == 2:
        return d
    boundary = _boundary_flags(grid)
    odd = [(idx % 2 == 1) for idx, _, _ in axes]
    if len(axes) == 1:
        d[odd[0] & ~boundary] = 0.5
    else:
        edge = (odd[0] ^ odd[1]) & ~boundary
        d[edge] = 0.75
    return d


# --------------------------------------------------------------------------
# splitting


@dataclass
class LorenzSplit:
    a: sp.csr_matrix
    a_d: np.ndarray
    a_plus: sp.csr_matrix
    a_z: sp.csr_matrix
    a_s: sp.csr_matrix
    a_value: float
    grid: Grid1D | Grid2D = field(repr=False)
    order: int = 4

    def reconstruct(self) -> sp.csr_matrix:
        return (sp.diags(self.a_d) + self.a_plus + self.a_z + self.a_s).tocsr()

    @property
    def b(self) -> sp.csr_matrix:
        """``A_d + A^z``."""
        return (sp.diags(self.a_d) + self.a_z).tocsr()


def lorenz_split(a: sp.spmatrix, grid: Grid1D | Grid2D, order: int = 4) -> LorenzSplit:
    """Split ``A`` into diagonal, positive and two nonpositive off-diagonal parts.

    Raises :class:`SignConditionViolated` when the measured cell Peclet
    number ``h|u|/(2 mu)`` of some row exceeds 1.
    """
    a = sp.csr_matrix(a)
    n = a.shape[0]
    axes = _axes(grid)
    if a.shape != (n, n) or axes[0][0].size != n:
        raise ValueError(f"matrix shape {a.shape} does not match grid with {axes[0][0].size} points")
    coo = a.tocoo()
    p, q, val = coo.row, coo.col, coo.data
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise SignPatternViolated("scheme matrix has a nonpositive diagonal entry")

    off = (p != q) & (val != 0)
    p, q, val = p[off], q[off], val[off]
    disp = np.stack([_displacement(idx[p], idx[q], length, per) for idx, length, per in axes])
    nonzero_axes = np.count_nonzero(disp, axis=0)
    if np.any(nonzero_axes != 1):
        raise ValueError("matrix couples points that are not on a common grid line")
    axis = np.argmax(disp != 0, axis=0)
    step = disp[axis, np.arange(disp.shape[1])]
    row_idx = np.stack([idx[p] for idx, _, _ in axes])[axis, np.arange(p.size)]

    a_value = _measured_peclet(p, axis, step, val, n, len(axes))
    if a_value > 1.0 + 1e-12:
        raise SignConditionViolated(a_value)

    pos = val > 0
    if order == 2:
        to_z = ~pos
    else:
        to_z = ~pos & (row_idx % 2 == 0)
    to_s = ~pos & ~to_z

    def part(mask):
        return sp.csr_matrix((val[mask], (p[mask], q[mask])), shape=(n, n))

    return LorenzSplit(a, diag, part(pos), part(to_z), part(to_s), a_value, grid, order)


def _measured_peclet(p, axis, step, val, n, n_axes) -> float:
    """Max over rows and axes of ``|w- - w+| / |w- + w+|`` for nearest couplings."""
    worst = 0.0
    for ax in range(n_axes):
        wm = np.zeros(n)
        wp = np.zeros(n)
        sel = (axis == ax) & (step == -1)
        np.add.at(wm, p[sel], val[sel])
        sel = (axis == ax) & (step == 1)
        np.add.at(wp, p[sel], val[sel])
        total = wm + wp
        ok = total < 0
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(wm[ok] - wp[ok]) / -total[ok])))
        if np.any((total >= 0) & ((wm != 0) | (wp != 0))):
            return math.inf
    return worst


# --------------------------------------------------------------------------
# checks


def is_m_matrix_via_scaling(b: sp.spmatrix, d: np.ndarray) -> bool:
    """True iff every row sum of ``B D`` is strictly positive.

    ``B`` must have a positive diagonal and nonpositive off-diagonal entries.
    """
    b = sp.csr_matrix(b)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("scaling must be strictly positive")
    diag = b.diagonal()
    if np.any(diag <= 0):
        raise SignPatternViolated("diagonal entry is not positive")
    off = b - sp.diags(diag)
    if off.nnz and off.data.max(initial=0.0) > 0:
        raise SignPatternViolated("positive off-diagonal entry")
    sums = b @ d
    scale = abs(b) @ d
    return bool(np.all(sums > ROW_SUM_FLOOR * scale))


@dataclass
class LorenzResult:
    certified: bool
    failed_condition: int | None = None
    witness: tuple | None = None
    min_scaled_row_sum: float = math.nan
    min_margin: float = math.nan

    def __bool__(self) -> bool:
        return self.certified


def check_lorenz(split: LorenzSplit, d_scaling: np.ndarray | None = None) -> LorenzResult:
    """Verify both Lorenz conditions. The witness on failure is
    ``(row, col, lhs, rhs)`` for condition 2 or ``(row, row_sum)`` for 1."""
    if d_scaling is None:
        d_scaling = default_scaling(split.grid, split.order)
    b = split.b
    sums = b @ d_scaling
    min_sum = float(sums.min())
    if not is_m_matrix_via_scaling(b, d_scaling):
        row = int(np.argmin(sums - ROW_SUM_FLOOR * (abs(b) @ d_scaling)))
        return LorenzResult(False, 1, (row, float(sums[row])), min_sum)

    plus = split.a_plus.tocoo()
    if plus.nnz == 0:
        return LorenzResult(True, None, None, min_sum, math.inf)
    product = (split.a_z @ sp.diags(1.0 / split.a_d) @ split.a_s).tocsr()
    rhs = np.asarray(product[plus.row, plus.col]).ravel()
    lhs = plus.data
    slack = PRODUCT_SLACK * np.maximum(np.abs(lhs), np.abs(rhs))
    margin = rhs - lhs
    bad = margin < -slack
    min_margin = float(margin.min())
    if np.any(bad):
        k = int(np.argmin(np.where(bad, margin, np.inf)))
        return LorenzResult(
            False, 2, (int(plus.row[k]), int(plus.col[k]), float(lhs[k]), float(rhs[k])), min_sum, min_margin
        )
    return LorenzResult(True, None, None, min_sum, min_margin)


def dense_inverse(a: sp.spmatrix | np.ndarray) -> np.ndarray:
    a = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    if a.shape[0] > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to {DENSE_LIMIT} unknowns, got {a.shape[0]}")
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    if not np.all(np.isfinite(inv)):
        raise SingularMatrix("inverse has non-finite entries")
    return inv


def dense_inverse_nonneg(a: sp.spmatrix | np.ndarray, tol: float | None = None) -> bool:
    """Brute-force check that ``A^{-1} >= -tol`` entrywise.

    Default ``tol`` is ``1e-12 * ||A^{-1}||_inf``.
    """
    inv = dense_inverse(a)
    if tol is None:
        tol = 1e-12 * float(np.max(np.sum(np.abs(inv), axis=1)))
    return bool(inv.min() >= -tol)


# --------------------------------------------------------------------------
# closed-form constraints


def c_max_1d(a: float) -> float:
    return (-8 * a * a - 20 * a + 6) / (2 * a + 1)


def c_max_2d(a: float) -> float:
    return (-8 * a * a - 11 * a + 2.5) / (2 * a + 1)


def a_max_1d(c: float) -> float:
    return (math.sqrt((c + 6) ** 2 + 112) - (c + 10)) / 8


def a_max_2d(c: float) -> float:
    return (math.sqrt((c + 1.5) ** 2 + 48) - (c + 5.5)) / 8


def _leq(x: float, y: float) -> bool:
    return x <= y + 1e-12 * max(abs(x), abs(y), 1.0)


@dataclass
class ConstraintReport:
    dim: int
    a_value: float
    c_value: float
    satisfied: dict[str, bool]
    binding_bounds: dict[str, float]

    @property
    def ok(self) -> bool:
        return self.satisfied["sufficient"]

    def lines(self) -> list[str]:
        out = [f"a = h*|u|/(2*mu) = {self.a_value:.6g}", f"c = h^2/(mu*dt) = {self.c_value:.6g}"]
        for name, passed in self.satisfied.items():
            out.append(f"{name:<14} {'PASS' if passed else 'FAIL'}")
        for name, value in self.binding_bounds.items():
            out.append(f"  bound {name:<20} {value:.6g}")
        return out


def _report(dim, h, dt, mu, u_max, a_cap, c_max, a_max, convenient) -> ConstraintReport:
    if min(h, dt, mu) <= 0 or u_max < 0:
        raise ValueError("h, dt, mu must be positive and u_max nonnegative")
    a = h * u_max / (2 * mu)
    c = h * h / (mu * dt)
    cm = c_max(a)
    sat = {
        "sign": _leq(a, 1.0),
        "mesh": a < a_cap,
        "time_step": a < a_cap and _leq(c, cm),
    }
    sat["sufficient"] = sat["sign"] and sat["mesh"] and sat["time_step"]
    sat.update(convenient(a, c))
    bounds = {
        "a_threshold": a_cap,
        "c_max_at_a": cm,
        "dt_min": h * h / (mu * cm) if cm > 0 else math.inf,
        "a_max_at_c": a_max(c),
    }
    return ConstraintReport(dim, a, c, sat, bounds)


def constraints_1d(h: float, dt: float, mu: float, u_max: float) -> ConstraintReport:
    """Sufficient mesh/time-step conditions for inverse positivity in 1D."""

    def convenient(a, c):
        hu_mu, dt_mu_h2 = 2 * a, 1 / c
        return {
            "convenient_1": _leq(hu_mu, 0.5) and _leq(3.0, dt_mu_h2),
            "convenient_2": _leq(0.5, dt_mu_h2) and _leq(hu_mu, 0.5),
        }

    return _report(1, h, dt, mu, u_max, SQRT37_BOUND, c_max_1d, a_max_1d, convenient)


def constraints_2d(h: float, dt: float, mu: float, u_max: float) -> ConstraintReport:
    """Sufficient mesh/time-step conditions for inverse positivity in 2D (dx = dy = h)."""

    def convenient(a, c):
        hu_mu, dt_mu_h2 = 2 * a, 1 / c
        return {
            "convenient_1": _leq(hu_mu, 1 / 3) and _leq(3.0, dt_mu_h2),
            "convenient_2": _leq(1.0, dt_mu_h2) and _leq(hu_mu, SQRT217_BOUND),
        }

    return _report(2, h, dt, mu, u_max, SQRT201_BOUND, c_max_2d, a_max_2d, convenient)


def dt_window_2d(h: float, mu: float, u_max: float) -> tuple[float, float]:
    """Smallest admissible ``dt`` for the 2D sufficient conditions (upper end is inf)."""
    a = h * u_max / (2 * mu)
    if a >= SQRT201_BOUND:
        return math.inf, math.inf
    return h * h / (mu * c_max_2d(a)), math.inf


@dataclass
class Certificate:
    """Bundle produced by :func:`certify`."""

    report: ConstraintReport | None
    split: LorenzSplit | None
    lorenz: LorenzResult | None
    oracle: bool | None
    sign_error: float | None = None

    @property
    def contradiction(self) -> bool:
        return bool(self.lorenz and self.lorenz.certified and self.oracle is False)

    def lines(self) -> list[str]:
        out = []
        if self.report is not None:
            out += self.report.lines()
        if self.sign_error is not None:
            out.append(f"lorenz_split   FAIL (sign condition, measured a = {self.sign_error:.6g})")
        elif self.lorenz is not None:
            verdict = "CERTIFIED" if self.lorenz.certified else f"FAILED condition {self.lorenz.failed_condition}"
            out.append(f"lorenz         {verdict}")
            if self.lorenz.witness is not None:
                out.append(f"  witness      {self.lorenz.witness}")
        if self.oracle is None:
            out.append("dense_oracle   SKIPPED")
        else:
            out.append(f"dense_oracle   {'NONNEGATIVE' if self.oracle else 'NEGATIVE ENTRIES'}")
        if self.lorenz is not None and not self.lorenz.certified and self.oracle:
            out.append("note           sufficient conditions not met; no guarantee")
        return out


def certify(op, with_oracle: bool = True) -> Certificate:
    """Run the full pipeline on a :class:`~bpfd.operators.ConvDiffOperator`."""
    grid = op.grid
    h = grid.h
    umax = op.velocity.max_norm
    dt_eff = op.dt / (1.0 + op.s * op.dt) if op.s else op.dt
    if isinstance(grid, Grid1D):
        report = constraints_1d(h, dt_eff, op.mu, umax)
    else:
        report = constraints_2d(h, dt_eff, op.mu, umax)
    a = (h * h / (op.mu * op.dt)) * op.matrix()
    try:
        split = lorenz_split(a, grid, op.order)
    except SignConditionViolated as exc:
        split, result, sign_err = None, None, exc.a_value
    else:
        result, sign_err = check_lorenz(split), None
    oracle = None
    if with_oracle and a.shape[0] <= DENSE_LIMIT:
        oracle = dense_inverse_nonneg(a)
    return Certificate(report, split, result, oracle, sign_err)
