"""Stream-function/vorticity solver for 2D incompressible flow.

Each step solves ``lap(psi) = omega`` for the stream function, forms the
velocity ``(u, v) = (-psi_y, psi_x)``, and advances ``omega`` with an
implicit convection-diffusion solve at that velocity.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientHistory
from .grid import Grid2D
from .linalg import KrylovSolver, poisson_solve, weighted_mean
from .monotonicity import constraints_2d, dt_window_2d
from .operators import ConvDiffOperator, VelocityField, central_derivative, fourth_order_derivative
from .stepping import BDF_COEFFS, DMPMonitor, Telemetry, step_imex_bdf


@dataclass
class FlowState:
    """Vorticity and the stream function/velocity it was advanced with.

    ``omega`` and ``psi`` are full-grid arrays (the interior shape when
    periodic); ``velocity`` is interior-valued.
    """

    grid: Grid2D
    omega: np.ndarray
    psi: np.ndarray | None = None
    velocity: VelocityField | None = None
    t: float = 0.0


def velocity_from_psi(psi_bar: np.ndarray, grid: Grid2D, order: int = 4) -> VelocityField:
    diff = fourth_order_derivative if order == 4 else central_derivative
    return VelocityField(-diff(psi_bar, grid, "y"), diff(psi_bar, grid, "x"))


def divergence(vel: VelocityField, grid: Grid2D, order: int = 4) -> np.ndarray:
    """Discrete divergence with the velocity differences (periodic grids only)."""
    if not (grid.gx.periodic and grid.gy.periodic):
        raise ValueError("divergence of interior-valued velocity needs a periodic grid")
    diff = fourth_order_derivative if order == 4 else central_derivative
    return diff(vel.u, grid, "x") + diff(vel.v, grid, "y")


def stream_and_velocity(omega_bar: np.ndarray, grid: Grid2D, order: int = 4):
    """``psi`` with ``lap(psi) = omega`` and its velocity.

    On periodic grids the quadrature mean of ``omega`` is projected out first:
    a constant vorticity carries no velocity, and nodal samples of a mean-free
    profile are only mean-free up to quadrature error.
    """
    psi = poisson_solve(omega_bar[grid.interior], grid, order, project=True)
    return psi, velocity_from_psi(psi, grid, order)


def initial_state(omega0: np.ndarray, grid: Grid2D, order: int = 4) -> FlowState:
    psi, vel = stream_and_velocity(omega0, grid, order)
    return FlowState(grid, np.array(omega0, dtype=float), psi, vel, 0.0)


def flow_step(state: FlowState, mu: float, dt: float, order: int = 4, solver=None, flow=None) -> FlowState:
    """First-order step: ``psi^{n+1}`` from ``omega^n``, then backward Euler for
    ``omega^{n+1}`` at the frozen velocity. Boundary vorticity is kept fixed.

    ``flow`` may pass a precomputed ``(psi, velocity)`` for ``state.omega``.
    """
    grid = state.grid
    psi, vel = flow if flow is not None else stream_and_velocity(state.omega, grid, order)
    op = ConvDiffOperator(grid, order, mu, dt, vel)
    solver = solver or KrylovSolver()
    rhs = state.omega.copy()
    omega = solver.solve(op, rhs, x0=state.omega)
    return FlowState(grid, omega, psi, vel, state.t + dt)


def _extrapolate(fields, k):
    w = BDF_COEFFS[k][2]
    return sum(wj * f for wj, f in zip(w, fields))


def bdf_flow_step(k: int, history, mu: float, dt: float, order: int = 4, solver=None) -> FlowState:
    """IMEX-BDF-k step; ``history`` holds FlowStates newest first.

    Convection and diffusion are implicit at the velocity extrapolated from
    the history levels.
    """
    if len(history) < k:
        raise InsufficientHistory(f"BDF{k} needs {k} levels, got {len(history)}")
    grid = history[0].grid
    levels = list(history)[:k]
    for s in levels:
        if s.velocity is None:
            s.psi, s.velocity = stream_and_velocity(s.omega, grid, order)
    u = _extrapolate([s.velocity.u for s in levels], k)
    v = _extrapolate([s.velocity.v for s in levels], k)
    gamma = BDF_COEFFS[k][0]
    op = ConvDiffOperator(grid, order, mu, dt / gamma, VelocityField(u, v))
    zero = np.zeros(grid.interior_shape)
    solver = solver or KrylovSolver()
    omega = step_imex_bdf(k, [s.omega for s in levels], [zero] * k, op, dt,
                          g_next=levels[0].omega, solver=solver)
    psi, vel = stream_and_velocity(omega, grid, order)
    return FlowState(grid, omega, psi, vel, levels[0].t + dt)


def bdf3_flow_step(history, mu: float, dt: float, order: int = 4, solver=None) -> FlowState:
    return bdf_flow_step(3, history, mu, dt, order, solver)


def run_bdf3_flow(omega0: np.ndarray, grid: Grid2D, mu: float, dt: float, t_end: float,
                  order: int = 4, solver=None) -> FlowState:
    """BDF3 to ``t_end`` with the same reduced-step startup as the Allen-Cahn
    driver, including the Richardson-extrapolated first step."""
    n = round(t_end / dt)
    if not math.isclose(n * dt, t_end, rel_tol=1e-9) or n < 2:
        raise ValueError("t_end must be an integer multiple (>= 2) of dt")
    solver = solver or KrylovSolver()
    state = initial_state(omega0, grid, order)
    levels = [state]
    sub = dt / 4
    cur = [state]
    for j in range(8):
        if j == 0:
            full = bdf_flow_step(1, cur, mu, sub, order, solver)
            mid = bdf_flow_step(1, cur, mu, sub / 2, order, solver)
            half = bdf_flow_step(1, [mid], mu, sub / 2, order, solver)
            new = FlowState(grid, 2.0 * half.omega - full.omega, t=sub)
            new.psi, new.velocity = stream_and_velocity(new.omega, grid, order)
        else:
            new = bdf_flow_step(2, cur, mu, sub, order, solver)
        cur = [new, cur[0]]
        if j % 4 == 3:
            levels.insert(0, new)
    hist = deque(levels, maxlen=3)
    for _ in range(2, n):
        hist.appendleft(bdf3_flow_step(hist, mu, dt, order, solver))
    return hist[0]


# --------------------------------------------------------------------------
# double shear layer and Taylor-Green


def shear_layer_init(grid: Grid2D, rho: float = math.pi / 15, delta: float = 0.05) -> np.ndarray:
    """``delta cos x - sech^2((y - pi/2)/rho)/rho`` for ``y <= pi``, mirrored
    branch ``delta cos x + sech^2((3 pi/2 - y)/rho)/rho`` above."""
    x, y = grid.meshgrid()
    return shear_layer_value(x, y, rho, delta)


def shear_layer_value(x, y, rho: float = math.pi / 15, delta: float = 0.05, branch: str | None = None):
    lower = delta * np.cos(x) - 1.0 / (rho * np.cosh((y - math.pi / 2) / rho) ** 2)
    upper = delta * np.cos(x) + 1.0 / (rho * np.cosh((1.5 * math.pi - y) / rho) ** 2)
    if branch == "lower":
        return lower
    if branch == "upper":
        return upper
    return np.where(y <= math.pi, lower, upper)


def taylor_green_vorticity(x, y, t, mu):
    return -2.0 * np.exp(-2.0 * mu * t) * np.sin(x) * np.sin(y)


# --------------------------------------------------------------------------
# monitored first-order runs


def cfl_dt(h: float, u_max: float, factor: float = 6.0) -> float:
    """``dt = h / (factor * |u|_inf)``."""
    return h / (factor * u_max) if u_max > 0 else math.inf


@dataclass
class FlowRunResult:
    state: FlowState
    steps: int
    telemetry: Telemetry
    monitor: DMPMonitor
    mean_drift: float
    guaranteed_steps: int
    snapshots: list = field(default_factory=list)


def run_flow(
    omega0: np.ndarray,
    grid: Grid2D,
    mu: float,
    t_end: float,
    order: int = 4,
    dt: float | None = None,
    cfl: float = 6.0,
    solver=None,
    telemetry: Telemetry | None = None,
    snapshot_times=(),
) -> FlowRunResult:
    """First-order flow run with per-step DMP monitoring.

    With ``dt=None`` each step uses ``h / (cfl |u|_inf)`` from the velocity it
    will be advanced with. Each step is also checked against the 2D sufficient
    conditions; ``guaranteed_steps`` counts those that satisfy them.
    """
    solver = solver or KrylovSolver()
    telemetry = telemetry or Telemetry()
    monitor = DMPMonitor("dmp")
    state = initial_state(omega0, grid, order)
    mean0 = weighted_mean(state.omega[grid.interior], grid, order)
    h = grid.h
    steps = guaranteed = 0
    drift = 0.0
    pending = sorted(snapshot_times)
    snaps = []
    while state.t < t_end - 1e-12:
        psi, vel = stream_and_velocity(state.omega, grid, order)
        step = dt if dt is not None else cfl_dt(h, vel.max_norm, cfl)
        if not math.isfinite(step):
            step = t_end - state.t
        step = min(step, t_end - state.t)
        if constraints_2d(h, step, mu, vel.max_norm).ok:
            guaranteed += 1
        new = flow_step(state, mu, step, order, solver, (psi, vel))
        v = monitor.check(state.omega, new.omega)
        telemetry.record(new.t, new.omega, solver.last_iterations, v)
        drift = max(drift, abs(weighted_mean(new.omega[grid.interior], grid, order) - mean0))
        state = new
        steps += 1
        while pending and state.t >= pending[0] - 1e-12:
            snaps.append((state.t, state.omega.copy()))
            pending.pop(0)
    return FlowRunResult(state, steps, telemetry, monitor, drift, guaranteed, snaps)


def certified_dt(h: float, mu: float, u_max: float) -> float | None:
    """Smallest ``dt`` meeting the 2D sufficient conditions, or None when the
    mesh Peclet number is already too large for any ``dt``."""
    lo, _ = dt_window_2d(h, mu, u_max)
    return lo if math.isfinite(lo) else None
