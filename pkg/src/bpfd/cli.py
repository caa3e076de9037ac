"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 certification contradicts the dense inverse (an implementation bug).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .config import RunConfig, load_config, parse_dt_rule, resolve_dt, with_overrides
from .errors import BpfdError, DimensionMismatch, GridError, NoDoubleWell
from .grid import Grid1D, Grid2D
from .linalg import DirectSolver, KrylovConfig, KrylovSolver, LaplacianPrecond, poisson_solve
from .models import EnergyModel, allen_cahn_accuracy_solution, manufactured_forcing, shear_velocity
from .monotonicity import certify
from .operators import ConvDiffOperator, VelocityField
from .stepping import AllenCahnProblem, DMPMonitor, StepPlan, Telemetry, format_row, run_allen_cahn, run_convection_diffusion
from .vorticity import run_bdf3_flow, run_flow, shear_layer_init, taylor_green_vorticity

log = logging.getLogger("bpfd")

EXIT_CONFIG, EXIT_SOLVER, EXIT_CONTRADICTION = 2, 3, 4


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# building blocks from a config


def build_grid(cfg: RunConfig, n: int | None = None):
    g = cfg.grid
    nx = n or g.n
    a, b = g.domain
    if g.dim == 1:
        return Grid1D(nx, a, b, g.bc)
    ny = n or g.m or g.n
    return Grid2D(Grid1D(nx, a, b, g.bc), Grid1D(ny, a, b, g.bc))


def build_model(cfg: RunConfig) -> EnergyModel:
    m = cfg.model
    if m.kind == "polynomial":
        return EnergyModel.polynomial(m.epsilon)
    if m.kind == "logarithmic":
        return EnergyModel.logarithmic(m.epsilon, m.theta, m.theta_c)
    return EnergyModel.null(m.epsilon)


def build_velocity(cfg: RunConfig, grid) -> VelocityField:
    v = cfg.velocity
    if isinstance(grid, Grid1D):
        x = grid.interior_nodes()
        if v.kind == "shear":
            return VelocityField(np.sin(-x))
        return VelocityField(np.full(x.shape, v.u if v.kind == "constant" else 0.0))
    x, y = grid.interior_meshgrid()
    if v.kind == "shear":
        u, w = shear_velocity(x, y)
        return VelocityField(u, w.copy())
    if v.kind == "constant":
        return VelocityField(np.full(x.shape, v.u), np.full(x.shape, v.v))
    return VelocityField.zero(x.shape)


def build_initial(cfg: RunConfig, grid) -> np.ndarray:
    ic = cfg.initial
    if isinstance(grid, Grid1D):
        x = grid.nodes()
        y = np.full_like(x, math.pi / 2)
    else:
        x, y = grid.meshgrid()
    if ic.kind == "zero":
        out = np.zeros(x.shape)
    elif ic.kind == "constant":
        return np.full(x.shape, ic.amplitude)
    elif ic.kind == "sin_y_sin2_x":
        out = ic.amplitude * np.sin(y) * np.sin(x) ** 2
    elif ic.kind == "shear_layer":
        if isinstance(grid, Grid1D):
            raise ConfigError("shear layer needs a 2D grid")
        return shear_layer_init(grid, ic.rho, ic.delta)
    elif ic.kind == "taylor_green":
        return taylor_green_vorticity(x, y, 0.0, cfg.model.mu)
    else:
        out = np.random.default_rng(ic.seed).uniform(-ic.amplitude, ic.amplitude, x.shape)
    if cfg.grid.bc == "dirichlet":
        mask = grid.boundary_mask() if isinstance(grid, Grid2D) else np.isin(np.arange(grid.size), [0, grid.size - 1])
        out[mask] = 0.0
    return out


def build_solver(cfg: RunConfig):
    if cfg.solver.kind == "direct":
        return DirectSolver()
    return KrylovSolver(KrylovConfig(rtol=cfg.solver.rtol))


# --------------------------------------------------------------------------
# output


def write_snapshot(out: Path, index: int, values: np.ndarray, t: float, cfg: RunConfig) -> Path:
    """CSV dump (one row per grid line, ``# nx ny t`` header) plus JSON sidecar."""
    arr = np.atleast_2d(values)
    ny, nx = arr.shape
    path = out / f"snapshot_{index:04d}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# nx={nx} ny={ny} t={t:.17g}\n")
        w = csv.writer(fh)
        for row in arr:
            w.writerow([f"{v:.17g}" for v in row])
    meta = {"nx": nx, "ny": ny, "t": t, "problem": cfg.problem, "order": cfg.order,
            "bc": cfg.grid.bc, "domain": list(cfg.grid.domain)}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg: RunConfig, out: Path, monitor_dmp: bool) -> int:
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg)
    (out / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n")
    with open(out / "telemetry.csv", "w", newline="") as fh:
        telemetry = Telemetry(stream=fh)
        want_dmp = monitor_dmp or "dmp" in cfg.monitors or "bounds" in cfg.monitors
        snaps: list[tuple[float, np.ndarray]] = []
        if cfg.problem == "vorticity":
            if not isinstance(grid, Grid2D):
                raise ConfigError("vorticity needs a 2D grid")
            omega0 = build_initial(cfg, grid)
            fixed = None if isinstance(cfg.time.dt, str) else float(cfg.time.dt)
            cfl = 6.0
            if isinstance(cfg.time.dt, str):
                kind, k = parse_dt_rule(cfg.time.dt)
                if kind != "cfl":
                    fixed = resolve_dt(cfg.time.dt, grid.h, 0.0)
                cfl = k
            res = run_flow(omega0, grid, cfg.model.mu, cfg.time.t_end, cfg.order, fixed, cfl,
                           KrylovSolver(KrylovConfig(rtol=cfg.solver.rtol)), telemetry, cfg.output.snapshot_times)
            snaps = res.snapshots
            final_t, final = res.state.t, res.state.omega
            monitor = res.monitor
            print(f"steps={res.steps} guaranteed_steps={res.guaranteed_steps} mean_drift={res.mean_drift:.3e}")
        elif cfg.problem == "convection_diffusion":
            vel = build_velocity(cfg, grid)
            dt = resolve_dt(cfg.time.dt, grid.h, vel.max_norm)
            op = ConvDiffOperator(grid, cfg.order, cfg.model.mu, dt, vel)
            phi0 = build_initial(cfg, grid)
            monitor = DMPMonitor("dmp") if want_dmp else None
            n = max(1, math.ceil(cfg.time.t_end / dt - 1e-9))
            res = run_convection_diffusion(phi0, op, n, phi0, build_solver(cfg), monitor, telemetry)
            final_t, final = res.t, res.phi
        else:
            if not isinstance(grid, Grid2D):
                raise ConfigError("Allen-Cahn runs need a 2D grid")
            model = build_model(cfg)
            vel = build_velocity(cfg, grid)
            dt = resolve_dt(cfg.time.dt, grid.h, vel.max_norm)
            problem = AllenCahnProblem(grid, model, cfg.model.mu, vel, cfg.order)
            plan = StepPlan(cfg.time.method if cfg.time.method != "backward_euler" else "imex1", dt, cfg.time.t_end, cfg.time.s)
            monitor = None
            if want_dmp:
                bound = model.beta if model.has_double_well else 1.0
                monitor = DMPMonitor("bounds", -bound, bound)
            keep = 1 if cfg.output.snapshot_times else 0
            res = run_allen_cahn(problem, build_initial(cfg, grid), plan, build_solver(cfg), monitor, telemetry, keep)
            snaps = first_at_or_after(res.history, cfg.output.snapshot_times)
            final_t, final = res.t, res.phi
    for i, (t, values) in enumerate(snaps):
        write_snapshot(out, i, values, t, cfg)
    if cfg.output.snapshot_final and not (snaps and math.isclose(snaps[-1][0], final_t, abs_tol=1e-12)):
        write_snapshot(out, len(snaps), final, final_t, cfg)
    if monitor is not None:
        print(f"monitor={monitor.mode} worst_violation={monitor.worst:.3e} at step {monitor.worst_step}")
    print(f"t={final_t:.6g} min={np.min(final):.6g} max={np.max(final):.6g}")
    return 0


def first_at_or_after(history, times) -> list:
    """For each requested time, the first kept ``(t, values)`` with ``t >= time``."""
    out = []
    for target in sorted(times):
        hit = next((item for item in history if item[0] >= target - 1e-12), None)
        if hit is not None and (not out or out[-1][0] != hit[0]):
            out.append(hit)
    return out


def observed_orders(hs, errors) -> list[float]:
    """``log(e1/e2) / log(h1/h2)`` for successive pairs (actual spacing ratios)."""
    return [math.log(errors[i] / errors[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(len(hs) - 1)]


def convergence_study(cfg: RunConfig) -> list[dict]:
    """Errors against an exact solution on each grid of ``cfg.convergence.grids``.

    ``l1`` is the mean absolute nodal error, ``linf`` the maximum; the time
    step starts at ``dt_coarse`` (default ``t_end/200``) and halves per level.
    """
    conv = cfg.convergence
    T = cfg.time.t_end
    dt0 = conv.dt_coarse or T / 200
    rows = []
    for level, n in enumerate(conv.grids):
        dt = dt0 / 2**level
        if conv.exact == "allen_cahn":
            grid = build_grid(cfg, n)
            model = build_model(cfg)
            exact = allen_cahn_accuracy_solution()
            forcing = manufactured_forcing(model, cfg.model.mu, exact, shear_velocity)
            problem = AllenCahnProblem(grid, model, cfg.model.mu, shear_velocity, cfg.order, forcing=forcing,
                                       boundary=exact.phi if cfg.grid.bc == "dirichlet" else None)
            x, y = grid.meshgrid()
            res = run_allen_cahn(problem, exact.phi(x, y, 0.0), StepPlan("imex_bdf3", dt, T), build_solver(cfg))
            err = np.abs(res.phi - exact.phi(x, y, res.t))[grid.interior]
        else:
            grid = build_grid(cfg, n)
            x, y = grid.meshgrid()
            mu = cfg.model.mu
            state = run_bdf3_flow(taylor_green_vorticity(x, y, 0.0, mu), grid, mu, dt, T, cfg.order,
                                  KrylovSolver(KrylovConfig(rtol=cfg.solver.rtol)))
            err = np.abs(state.omega - taylor_green_vorticity(x, y, state.t, mu))[grid.interior]
        rows.append({"n": n, "h": grid.gx.h, "dt": dt, "l1": float(err.mean()), "linf": float(err.max())})
    hs = [r["h"] for r in rows]
    for key in ("l1", "linf"):
        orders = observed_orders(hs, [r[key] for r in rows])
        for r, o in zip(rows[1:], orders):
            r[f"{key}_order"] = o
    return rows


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    rows = convergence_study(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cols = ("n", "h", "dt", "l1", "l1_order", "linf", "linf_order")
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(format_row(tuple(r.get(c, "") for c in cols)))
    print(f"{'grid':>8} {'l1':>10} {'order':>6} {'linf':>10} {'order':>6}")
    for r in rows:
        o1 = f"{r['l1_order']:.2f}" if "l1_order" in r else "-"
        oi = f"{r['linf_order']:.2f}" if "linf_order" in r else "-"
        print(f"{r['n']:>8} {r['l1']:10.3e} {o1:>6} {r['linf']:10.3e} {oi:>6}")
    return 0


def cmd_verify_monotonicity(cfg: RunConfig, dt_override=None) -> int:
    grid = build_grid(cfg)
    vel = build_velocity(cfg, grid)
    h = grid.h
    dt = resolve_dt(dt_override if dt_override is not None else cfg.time.dt, h, vel.max_norm)
    op = ConvDiffOperator(grid, cfg.order, cfg.model.mu, dt, vel)
    cert = certify(op, with_oracle=True)
    for line in cert.lines():
        print(line)
    if cert.contradiction:
        print("CONTRADICTION: certified matrix has a negative inverse entry", file=sys.stderr)
        return EXIT_CONTRADICTION
    return 0


def cmd_poisson_test(cfg: RunConfig, grids=(16, 32, 64)) -> int:
    """Eigen-based inverse vs dense solve, then convergence on -2 sin x sin y."""
    order = cfg.order
    g9 = Grid2D.square(9, 0.0, 1.0)
    pre = LaplacianPrecond(g9, mu=1.0, dt=1.0, order=order)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(g9.shape[0] * g9.shape[1])
    x = pre.apply(b)
    dense = np.linalg.solve(_dense_forward(pre), b)
    print(f"eigen_vs_dense_9x9 max_diff={np.max(np.abs(x - dense)):.3e}")
    prev = None
    for n in grids:
        g = Grid2D.square(n, 0.0, 2 * math.pi, "periodic")
        xx, yy = g.meshgrid()
        psi = poisson_solve(-2 * np.sin(xx) * np.sin(yy), g, order)
        e = float(np.max(np.abs(psi - np.sin(xx) * np.sin(yy))))
        rate = "-" if prev is None else f"{math.log2(prev / e):.2f}"
        print(f"n={n} linf={e:.3e} order={rate}")
        prev = e
    return 0


def _dense_forward(pre: LaplacianPrecond) -> np.ndarray:
    n = pre.grid.shape[0] * pre.grid.shape[1]
    eye = np.eye(n)
    return np.column_stack([pre.forward(eye[:, k]) for k in range(n)])


# --------------------------------------------------------------------------


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(p) for p in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like NxM, got {text!r}") from exc
    return nx, ny


def _parse_dt(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bpfd", description="Bound-preserving fourth-order finite differences")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "convergence", "verify-monotonicity", "poisson-test"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--order", type=int, choices=(2, 4))
        s.add_argument("--grid", type=_parse_grid, help="NxM")
        s.add_argument("--dt", type=_parse_dt, help="number, 'h/K' or 'h/(K u)'")
        s.add_argument("--monitor", choices=("dmp",))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        grid_over = None
        if args.grid:
            grid_over = {"n": args.grid[0], "m": args.grid[1]}
        cfg = with_overrides(cfg, order=args.order, grid=grid_over,
                             time=None if args.dt is None else {"dt": args.dt})
    except (OSError, ValidationError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return cmd_run(cfg, args.out, args.monitor == "dmp")
        if args.command == "convergence":
            return cmd_convergence(cfg, args.out)
        if args.command == "verify-monotonicity":
            return cmd_verify_monotonicity(cfg)
        return cmd_poisson_test(cfg)
    except (ConfigError, GridError, DimensionMismatch, NoDoubleWell) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BpfdError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
