"""Driver: build a simulation from a RunConfig and run it to completion."""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, linalg
from . import mmpde as mm
from . import problems as pr
from . import qtensor as qt
from . import timestep as ts
from .config import RunConfig


@dataclass
class Simulation:
    config: RunConfig
    params: object  # dimensional MaterialParams
    nd: object  # nondimensional MaterialParams
    model: ts.PhysicsModel
    state: ts.SimState
    opts: ts.IntegratorOptions
    stats: ts.StepStats = field(default_factory=ts.StepStats)

    @property
    def time_scale(self) -> float:
        return self.params.time_scale

    def snapshot(self, w=None) -> io.Snapshot:
        s = self.state
        return io.Snapshot(
            time=s.t * self.time_scale,
            mesh=s.mesh.copy(),
            q=s.q.copy(),
            U=s.u.copy(),
            w=s.w_prev if w is None else w,
            dt_history=list(self.stats.dt_history),
            energy=self.model.energy(s.q, s.u, s.mesh.phys_coords),
        )


def build(config: RunConfig, log: linalg.SolverLog | None = None) -> Simulation:
    params = config.material.params()
    nd = params.nondimensional()
    zeta = params.zeta
    t0 = params.time_scale
    if config.problem == "defect":
        cfg = pr.DefectConfig(d_index=config.d_index, half_width=config.half_width)
        h = cfg.half_width
        from .mesh import build_structured

        mesh = build_structured(config.nx, config.ny, (-h, h, -h, h))
        setup = pr.defect_initial_and_boundary(mesh, cfg, nd)
        u_dofs = u_vals = None
    else:
        cfg = pr.PiCellConfig(
            width=config.width, thickness=config.thickness, pretilt_deg=config.pretilt_deg,
            field_strength=0.0 if config.zero_field else config.field_strength, perturb=config.perturb,
            perturb_deg=config.perturb_deg, perturb_extent=config.perturb_extent,
        )
        mesh = pr.picell_mesh(config.nx, config.ny, cfg, zeta)
        setup = pr.picell_initial(mesh, cfg, nd, zeta=zeta, potential_scale=params.potential_scale)
        u_dofs, u_vals = (None, None) if config.zero_field else (setup.u_dofs, setup.u_values)
    model = ts.PhysicsModel(
        mesh, nd, setup.q_dofs, setup.q_values, u_dofs, u_vals,
        newton_tol=config.newton_tol, newton_maxit=config.newton_maxit, linear_tol=config.linear_tol, log=log,
        q_bc=setup.q_bc,
    )
    mp = mm.MmpdeParams(
        tau=config.tau / t0, m_exp=config.m_exp, omega=config.omega, smooth_sweeps=config.smooth_sweeps,
        monitor_kind=config.monitor_kind, balance=config.balance,
        monitor_length=(config.monitor_length / zeta) if config.monitor_length > 0 else None,
        scheme=config.scheme,
    )
    ctl = ts.StepController(
        tol=config.tol, dt_min=config.dt_min / t0, dt_max=config.dt_max / t0,
        safety=config.safety, shrink=config.shrink, grow=config.grow,
    )
    opts = ts.IntegratorOptions(controller=ctl, mmpde=mp, frozen_mesh=config.frozen_mesh)
    state = ts.initial_state(model, mesh, setup.q0, config.dt0 / t0)
    return Simulation(config, params, nd, model, state, opts)


@dataclass
class RunReport:
    ok: bool
    summary: dict
    snapshots: list
    defects: list
    sim: Simulation | None = None
    error: str = ""


def _set_threads(n: int) -> None:
    if n <= 1:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


def run(config: RunConfig, write: bool = True, keep: bool = True, progress=None) -> RunReport:
    """Advance to t_end, writing snapshots, defect reports and a summary.

    Snapshots land on multiples of ``snapshot_interval`` and at t_end;
    defect detection runs on multiples of ``report_interval`` (or at
    snapshots when that is 0) for the Pi-cell problem.
    """
    _set_threads(config.threads)
    wall0 = _time.perf_counter()
    cpu0 = _time.process_time()
    log = linalg.SolverLog()
    sim = build(config, log)
    out = Path(config.out_dir)
    t_end = config.t_end / sim.time_scale
    snap_dt = config.snapshot_interval / sim.time_scale if config.snapshot_interval > 0 else t_end
    rep_dt = config.report_interval / sim.time_scale if config.report_interval > 0 else snap_dt
    marks = sorted(set(np.round(np.concatenate([
        np.arange(snap_dt, t_end * (1 - 1e-12), snap_dt),
        np.arange(rep_dt, t_end * (1 - 1e-12), rep_dt) if config.problem == "picell" else [],
        [t_end],
    ]), 12)))
    snaps_at = set(np.round(np.concatenate([np.arange(snap_dt, t_end * (1 - 1e-12), snap_dt), [t_end]]), 12))
    snapshots: list = []
    defects: list = []
    paths = []
    thr = pr.DetectThresholds()

    def emit(idx):
        snap = sim.snapshot()
        if write:
            ext = config.snapshot_format
            p = out / f"snapshot_{idx:04d}.{ext}"
            io.write_snapshot(snap, p, ext)
            paths.append(str(p))
        if keep:
            snapshots.append(snap)

    def report():
        found = pr.detect_defects(sim.state.q, sim.state.mesh, thr)
        defects.append((sim.state.t * sim.time_scale, found))

    emit(0)
    if config.problem == "picell":
        report()
    error = ""
    k = 1
    try:
        for mark in marks:
            while sim.state.t < mark * (1 - 1e-12):
                sim.state = ts.advance(sim.model, sim.state, sim.opts, sim.stats, dt_cap=mark - sim.state.t)
                if progress is not None:
                    progress(sim)
            if config.problem == "picell" and (mark in snaps_at or config.report_interval > 0):
                report()
            if mark in snaps_at:
                emit(k)
                k += 1
    except (ts.StepSizeUnderflow, ArithmeticError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    st = sim.stats
    summary = {
        "status": "ok" if not error else "failed",
        "problem": config.problem,
        "monitor": config.monitor_kind,
        "frozen_mesh": config.frozen_mesh,
        "elements": sim.state.mesh.n_elements,
        "t_final_s": float(sim.state.t * sim.time_scale),
        "accepted_steps": st.accepted,
        "rejected_steps": st.rejected,
        "attempted_steps": st.attempted,
        "newton_failures": st.newton_failures,
        "tangled_rejections": st.tangled,
        "final_energy": float(sim.model.energy(sim.state.q, sim.state.u, sim.state.mesh.phys_coords)),
        "min_jacobian": float(min(st.min_jacobian)) if st.min_jacobian else 1.0,
        "max_linear_residual_ratio": float(log.worst_ratio()),
        "linear_solves": len(log.records),
        "cpu_time_s": _time.process_time() - cpu0,
        "wall_time_s": _time.perf_counter() - wall0,
    }
    if error:
        summary["error"] = error
    if write:
        io.write_summary(out / "summary.txt", summary)
        if defects:
            _write_defects(out / "defects.csv", defects)
    return RunReport(not error, summary, snapshots, defects, sim, error)


def _write_defects(path, defects) -> None:
    lines = ["time_s,count,charges,positions,separation"]
    for t, found in defects:
        charges = ";".join(f"{d.charge:+.1f}" for d in found)
        pos = ";".join(f"{d.position[0]:.6g}:{d.position[1]:.6g}" for d in found)
        sep = pair_separation(found)
        lines.append(f"{t:.9g},{len(found)},{charges},{pos},{'' if sep is None else f'{sep:.9g}'}")
    io.atomic_write(path, "\n".join(lines) + "\n")


def pair_separation(found) -> float | None:
    """Smallest distance between a +1/2 and a -1/2 detection."""
    plus = [d.position for d in found if d.charge > 0]
    minus = [d.position for d in found if d.charge < 0]
    if not plus or not minus:
        return None
    return float(min(np.linalg.norm(a - b) for a in plus for b in minus))


def order_parameter_range(q) -> tuple[float, float]:
    S = qt.order_parameter(q)
    return float(S.min()), float(S.max())
