"""Time integrators for convection-diffusion and Allen-Cahn problems.

Every implicit step is a solve with a :class:`ConvDiffOperator`. A BDF-k
step ``(gamma phi^{n+1} - sum a_j phi^{n-j}) / dt + N(phi^{n+1}) = E*`` is
rewritten as ``phi^{n+1} + (dt/gamma) N(phi^{n+1}) = rhs / gamma`` so the
same operator type with step ``dt/gamma`` serves all orders.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientHistory
from .grid import Grid2D
from .linalg import DirectSolver
from .models import EnergyModel, f_prime
from .operators import ConvDiffOperator, FieldState, VelocityField

log = logging.getLogger(__name__)

# (gamma, history coefficients newest first, extrapolation weights newest first)
BDF_COEFFS = {
    1: (1.0, (1.0,), (1.0,)),
    2: (1.5, (2.0, -0.5), (2.0, -1.0)),
    3: (11.0 / 6.0, (3.0, -1.5, 1.0 / 3.0), (3.0, -3.0, 1.0)),
}


class Method(str, enum.Enum):
    BACKWARD_EULER = "backward_euler"
    IMEX1 = "imex1"
    STABILIZED_IMEX1 = "stabilized_imex1"
    IMEX_BDF3 = "imex_bdf3"

    @property
    def order(self) -> int:
        return 3 if self is Method.IMEX_BDF3 else 1


@dataclass
class StepPlan:
    method: Method
    dt: float
    t_end: float
    s: float = 0.0
    history: deque = field(default_factory=lambda: deque(maxlen=3))

    def __post_init__(self):
        self.method = Method(self.method)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.s < 0:
            raise ValueError(f"S must be nonnegative, got {self.s}")
        if self.s > 0 and self.method is not Method.STABILIZED_IMEX1:
            raise ValueError("S > 0 requires the stabilized method")
        self.history = deque(self.history, maxlen=self.method.order)

    @property
    def dt_eff(self) -> float:
        """Effective step ``dt / (1 + dt*S)`` of the stabilized scheme."""
        return self.dt / (1.0 + self.dt * self.s)

    @property
    def n_steps(self) -> int:
        """Number of steps to reach ``t_end``; the last one may be shortened."""
        return max(1, math.ceil(self.t_end / self.dt - 1e-9))


def _full_rhs(interior_rhs: np.ndarray, grid, g_next) -> np.ndarray:
    out = np.zeros(grid.shape if isinstance(grid, Grid2D) else (grid.size,))
    if g_next is not None:
        out[...] = g_next
    out[grid.interior] = interior_rhs
    return out


def _values(state) -> np.ndarray:
    return state.values if isinstance(state, FieldState) else np.asarray(state, dtype=float)


def step_backward_euler(state: FieldState, op: ConvDiffOperator, g_next=None, solver=None) -> FieldState:
    """Solve ``L(phi^{n+1}) = phi^n`` inside, ``phi^{n+1} = g`` on the boundary.

    ``g_next`` is a full-shape array whose boundary entries are used (zero if
    omitted); ``op`` must carry ``s = 0``.
    """
    solver = solver or DirectSolver()
    phi = _values(state)
    rhs = _full_rhs(phi[op.grid.interior], op.grid, g_next)
    return FieldState(solver.solve(op, rhs, x0=phi), op.grid)


def allen_cahn_rhs(phi_interior: np.ndarray, model: EnergyModel, dt: float, s: float = 0.0) -> np.ndarray:
    """``phi - dt/eps F'(phi) + S dt phi`` at interior points."""
    return phi_interior - (dt / model.epsilon) * f_prime(model, phi_interior) + s * dt * phi_interior


def step_imex_allen_cahn(
    state: FieldState,
    op: ConvDiffOperator,
    model: EnergyModel,
    s: float = 0.0,
    source: np.ndarray | None = None,
    g_next=None,
    solver=None,
) -> FieldState:
    """One (stabilized) IMEX step; ``op`` must be built with the same ``s``.

    ``source`` is an optional interior forcing at the new time level.
    """
    if not math.isclose(op.s, s, rel_tol=0, abs_tol=1e-15):
        raise ValueError(f"operator built with S={op.s}, step called with S={s}")
    solver = solver or DirectSolver()
    phi = _values(state)
    inner = phi[op.grid.interior]
    if model.has_double_well and np.max(np.abs(inner)) > model.beta * (1 + 1e-12):
        warnings.warn("input exceeds the well bound beta; no bound guarantee", stacklevel=2)
    rhs = allen_cahn_rhs(inner, model, op.dt, s)
    if source is not None:
        rhs = rhs + op.dt * source
    return FieldState(solver.solve(op, _full_rhs(rhs, op.grid, g_next), x0=phi), op.grid)


def step_imex_bdf(
    k: int,
    history: Sequence[np.ndarray],
    explicit: Sequence[np.ndarray],
    op: ConvDiffOperator,
    dt: float,
    source: np.ndarray | None = None,
    g_next=None,
    solver=None,
) -> np.ndarray:
    """IMEX-BDF-k step on full arrays.

    ``history`` and ``explicit`` hold full states and interior explicit terms,
    newest first. ``op`` must have step ``dt / gamma_k``.
    """
    if len(history) < k or len(explicit) < k:
        raise InsufficientHistory(f"BDF{k} needs {k} levels, got {len(history)}")
    gamma, a, b = BDF_COEFFS[k]
    if not math.isclose(op.dt, dt / gamma, rel_tol=1e-12):
        raise ValueError(f"operator step {op.dt} != dt/gamma = {dt / gamma}")
    interior = op.grid.interior
    rhs = sum(aj * h[interior] for aj, h in zip(a, history))
    rhs = rhs + dt * sum(bj * e for bj, e in zip(b, explicit))
    if source is not None:
        rhs = rhs + dt * source
    solver = solver or DirectSolver()
    return solver.solve(op, _full_rhs(rhs / gamma, op.grid, g_next), x0=history[0])


def step_imex_bdf3(history, explicit, op, dt, source=None, g_next=None, solver=None) -> np.ndarray:
    return step_imex_bdf(3, history, explicit, op, dt, source, g_next, solver)


# --------------------------------------------------------------------------
# monitoring


@dataclass
class DMPMonitor:
    """Tracks how far each step leaves its admissible interval.

    ``mode="dmp"``: interval is [min, max] of the previous state (boundary
    data included). ``mode="bounds"``: fixed ``[lower, upper]``.
    Violations are absolute; ``worst`` keeps the largest with its location.
    """

    mode: str = "dmp"
    lower: float = -math.inf
    upper: float = math.inf
    worst: float = 0.0
    worst_step: int = -1
    worst_index: tuple | None = None
    steps: int = 0

    def check(self, before: np.ndarray, after: np.ndarray, g=None) -> float:
        if self.mode == "dmp":
            lo, hi = float(np.min(before)), float(np.max(before))
            if g is not None:
                lo, hi = min(lo, float(np.min(g))), max(hi, float(np.max(g)))
        elif self.mode == "bounds":
            lo, hi = self.lower, self.upper
        else:
            raise ValueError(f"unknown monitor mode {self.mode!r}")
        excess = np.maximum(after - hi, lo - after)
        idx = np.unravel_index(int(np.argmax(excess)), after.shape)
        v = max(float(excess[idx]), 0.0)
        if v > self.worst:
            self.worst, self.worst_step, self.worst_index = v, self.steps, tuple(int(i) for i in idx)
        self.steps += 1
        return v


@dataclass
class Telemetry:
    """Per-step rows ``t, min, max, iters, dmp_violation``; optional live CSV stream."""

    stream: io.TextIOBase | None = None
    rows: list = field(default_factory=list)

    HEADER = ("t", "min", "max", "iters", "dmp_violation")

    def __post_init__(self):
        self._writer = None
        if self.stream is not None:
            self._writer = csv.writer(self.stream)
            self._writer.writerow(self.HEADER)

    def record(self, t: float, values: np.ndarray, iters: int, violation: float):
        row = (t, float(np.min(values)), float(np.max(values)), int(iters), violation)
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow(format_row(row))
            self.stream.flush()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for row in self.rows:
                w.writerow(format_row(row))


def format_row(row) -> list[str]:
    return [v if isinstance(v, str) else (str(v) if isinstance(v, int) else f"{v:.17g}") for v in row]


# --------------------------------------------------------------------------
# drivers


@dataclass
class RunResult:
    phi: np.ndarray
    t: float
    steps: int
    telemetry: Telemetry
    monitor: DMPMonitor | None
    history: list = field(default_factory=list)


def run_convection_diffusion(
    phi0: np.ndarray,
    op: ConvDiffOperator,
    n_steps: int,
    g=None,
    solver=None,
    monitor: DMPMonitor | None = None,
    telemetry: Telemetry | None = None,
) -> RunResult:
    """Repeated backward-Euler steps with fixed operator and boundary data."""
    solver = solver or DirectSolver()
    telemetry = telemetry or Telemetry()
    phi = np.array(phi0, dtype=float)
    t = 0.0
    for _ in range(n_steps):
        new = step_backward_euler(phi, op, g, solver).values
        t += op.dt
        v = monitor.check(phi, new, None if g is None else g[op.grid.boundary_mask()]) if monitor else 0.0
        telemetry.record(t, new, solver.last_iterations, v)
        phi = new
    return RunResult(phi, t, n_steps, telemetry, monitor)


VelocitySpec = VelocityField | Callable[[np.ndarray, np.ndarray, float], tuple]


@dataclass
class AllenCahnProblem:
    """Allen-Cahn with convection: ``phi_t + u.grad(phi) = mu lap(phi) - F'(phi)/eps + f``."""

    grid: Grid2D
    model: EnergyModel
    mu: float
    velocity: VelocitySpec | None = None
    order: int = 4
    forcing: Callable | None = None  # f(x, y, t) on interior nodes
    boundary: Callable | None = None  # g(x, y, t) on the full grid

    def velocity_at(self, t: float) -> VelocityField:
        if self.velocity is None:
            return VelocityField.zero(self.grid.interior_shape)
        if isinstance(self.velocity, VelocityField):
            return self.velocity
        x, y = self.grid.interior_meshgrid()
        u, v = self.velocity(x, y, t)
        return VelocityField(np.broadcast_to(u, x.shape).copy(), np.broadcast_to(v, x.shape).copy())

    def source_at(self, t: float):
        if self.forcing is None:
            return None
        x, y = self.grid.interior_meshgrid()
        return self.forcing(x, y, t)

    def boundary_at(self, t: float):
        if self.boundary is None:
            return None
        x, y = self.grid.meshgrid()
        return self.boundary(x, y, t)

    def explicit_term(self, phi_full: np.ndarray) -> np.ndarray:
        return -f_prime(self.model, phi_full[self.grid.interior]) / self.model.epsilon

    def operator(self, dt: float, t: float, s: float = 0.0) -> ConvDiffOperator:
        return ConvDiffOperator(self.grid, self.order, self.mu, dt, self.velocity_at(t), s)


class _OperatorCache:
    """Reuses operators when the velocity is time independent."""

    def __init__(self, problem: AllenCahnProblem):
        self.problem = problem
        self.frozen = problem.velocity is None or isinstance(problem.velocity, VelocityField)
        self._ops: dict = {}

    def get(self, dt: float, t: float, s: float = 0.0) -> ConvDiffOperator:
        if not self.frozen:
            return self.problem.operator(dt, t, s)
        key = (dt, s)
        if key not in self._ops:
            self._ops[key] = self.problem.operator(dt, t, s)
        return self._ops[key]


def _richardson_first_step(problem: AllenCahnProblem, ops: _OperatorCache, phi: np.ndarray, h: float, solver):
    """IMEX1 from t = 0 over ``h``, extrapolated from one full and two half
    steps so its local error is third order like the BDF2 steps after it."""

    def imex1(start, t0, dt):
        op = ops.get(dt, t0 + dt)
        return step_imex_bdf(1, [start], [problem.explicit_term(start)], op, dt,
                             problem.source_at(t0 + dt), problem.boundary_at(t0 + dt), solver)

    full = imex1(phi, 0.0, h)
    half = imex1(imex1(phi, 0.0, h / 2), h / 2, h / 2)
    return 2.0 * half - full


def run_allen_cahn(
    problem: AllenCahnProblem,
    phi0: np.ndarray,
    plan: StepPlan,
    solver=None,
    monitor: DMPMonitor | None = None,
    telemetry: Telemetry | None = None,
    keep_every: int = 0,
) -> RunResult:
    """Integrate to ``plan.t_end`` with IMEX1, stabilized IMEX1, or IMEX-BDF3.

    BDF3 startup: one IMEX1 step and then IMEX-BDF2 steps, all at ``dt/4``,
    up to ``t = 2 dt``; the levels at ``0, dt, 2 dt`` seed the BDF3 history.
    The IMEX1 step is Richardson-extrapolated, otherwise its second-order
    local error would cap the global order at two.
    """
    solver = solver or DirectSolver()
    telemetry = telemetry or Telemetry()
    ops = _OperatorCache(problem)
    phi = np.array(phi0, dtype=float)
    dt = plan.dt
    n = plan.n_steps
    kept = []

    def emit(step, t, before, after):
        v = monitor.check(before, after) if monitor else 0.0
        telemetry.record(t, after, solver.last_iterations, v)
        if keep_every and step % keep_every == 0:
            kept.append((t, after.copy()))

    if plan.method in (Method.IMEX1, Method.STABILIZED_IMEX1, Method.BACKWARD_EULER):
        s = plan.s
        t = 0.0
        for step in range(1, n + 1):
            h = min(dt, plan.t_end - t) if step == n else dt
            op = ops.get(h, t + h, s)
            new = step_imex_allen_cahn(phi, op, problem.model, s, problem.source_at(t + h),
                                       problem.boundary_at(t + h), solver).values
            emit(step, t + h, phi, new)
            phi, t = new, t + h
        return RunResult(phi, t, n, telemetry, monitor, kept)

    # IMEX-BDF3 with reduced-step startup
    sub = dt / 4.0
    levels = [(phi, problem.explicit_term(phi))]
    t = 0.0
    cur = [(phi, levels[0][1])]  # newest first, substep history
    for j in range(8):
        if j == 0:
            new = _richardson_first_step(problem, ops, phi, sub, solver)
        else:
            gamma = BDF_COEFFS[2][0]
            op = ops.get(sub / gamma, t + sub)
            new = step_imex_bdf(2, [c[0] for c in cur], [c[1] for c in cur], op, sub,
                                problem.source_at(t + sub), problem.boundary_at(t + sub), solver)
        t += sub
        cur = [(new, problem.explicit_term(new))] + cur[:1]
        if j % 4 == 3:
            levels.insert(0, cur[0])
            emit((j + 1) // 4, t, levels[1][0], new)
    phi = levels[0][0]
    hist = deque(levels, maxlen=3)
    gamma = BDF_COEFFS[3][0]
    t = 2 * dt
    for step in range(3, n + 1):
        op = ops.get(dt / gamma, t + dt)
        new = step_imex_bdf(3, [h[0] for h in hist], [h[1] for h in hist], op, dt,
                            problem.source_at(t + dt), problem.boundary_at(t + dt), solver)
        emit(step, t + dt, phi, new)
        hist.appendleft((new, problem.explicit_term(new)))
        phi, t = new, t + dt
    return RunResult(phi, t, n, telemetry, monitor, kept)
