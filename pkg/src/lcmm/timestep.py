"""SDIRK2 time stepping of d/dt(M q) = G(q, u), C(q, u) = 0 on a moving mesh.

Stages are written for z = M q. With the mesh moving linearly over the step,
stage s solves

    M(t_s) Q_s = M(t_n) q_n + dt * sum_{j<s} a_sj G_j + gamma dt G(Q_s, u_s)

by a quasi-Newton iteration in which u is re-solved from the Maxwell system
after every update. The tableau is stiffly accurate, so q_{n+1} = Q_2; the
embedded first-order solution uses weights (1, 0), giving
z_{n+1} - z_hat = gamma dt (G_2 - G_1).
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem, linalg
from . import mmpde as mm
from .energy import MaterialParams
from .mesh import TangledMeshError, TriMesh, validate


class StageFailure(ArithmeticError):
    pass


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass(frozen=True)
class Sdirk2Tableau:
    gamma: float = 1.0 - np.sqrt(2.0) / 2.0

    @property
    def A(self) -> np.ndarray:
        g = self.gamma
        return np.array([[g, 0.0], [1.0 - g, g]])

    @property
    def b(self) -> np.ndarray:
        return self.A[1].copy()

    @property
    def b_hat(self) -> np.ndarray:
        return np.array([1.0, 0.0])

    @property
    def c(self) -> np.ndarray:
        return self.A.sum(1)


SDIRK2 = Sdirk2Tableau()


def sdirk2_linear(lam: float, y0: float, dt: float, n_steps: int = 1, tableau: Sdirk2Tableau = SDIRK2):
    """Integrate y' = lam*y; returns (y_2nd, y_1st_embedded) after n_steps."""
    A, b, bh = tableau.A, tableau.b, tableau.b_hat
    y = float(y0)
    yh = y
    for _ in range(n_steps):
        k = np.zeros(2)
        for s in range(2):
            known = y + dt * (A[s, :s] @ k[:s])
            Y = known / (1.0 - dt * A[s, s] * lam)
            k[s] = lam * Y
        yh = y + dt * (bh @ k)
        y = y + dt * (b @ k)
    return y, yh


@dataclass
class StepController:
    tol: float = 1e-3
    dt_min: float = 1e-8
    dt_max: float = 1e3
    safety: float = 0.9
    shrink: float = 0.2
    grow: float = 2.0

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max")
        if not self.tol >= 0:
            raise ValueError("tol must be non-negative")


def adjust_dt(E_max: float, dt: float, ctl: StepController):
    """Accept/reject decision and next step size."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    E = max(float(E_max), 1e-300)
    accept = E <= ctl.tol
    factor = ctl.safety * np.sqrt(ctl.tol / E) if ctl.tol > 0 else 0.0
    factor = min(max(factor, ctl.shrink), ctl.grow)
    dt_next = dt * factor
    if not accept and dt <= ctl.dt_min * (1 + 1e-12):
        raise StepSizeUnderflow(f"step size underflow: dt={dt:.3e} rejected with E={E_max:.3e}")
    return accept, float(min(max(dt_next, ctl.dt_min), ctl.dt_max))


@dataclass
class SimState:
    mesh: TriMesh
    q: np.ndarray  # (ndof, 5)
    u: np.ndarray  # (ndof,)
    t: float = 0.0
    dt: float = 1e-3
    w_prev: np.ndarray | None = None

    def copy(self) -> "SimState":
        return SimState(
            self.mesh.copy(), self.q.copy(), self.u.copy(), self.t, self.dt,
            None if self.w_prev is None else self.w_prev.copy(),
        )


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    newton_failures: int = 0
    tangled: int = 0
    newton_iterations: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    min_jacobian: list = field(default_factory=list)
    error: list = field(default_factory=list)
    cpu_time: float = 0.0

    @property
    def attempted(self) -> int:
        return self.accepted + self.rejected


class PhysicsModel:
    """Discrete physical system on a fixed-connectivity mesh with Dirichlet data."""

    def __init__(self, mesh: TriMesh, params: MaterialParams, q_dofs, q_values,
                 u_dofs=None, u_values=None, newton_tol: float = 1e-9, newton_maxit: int = 25,
                 linear_tol: float = 1e-10, log: linalg.SolverLog | None = None, q_bc=None):
        """``q_bc``, if given, maps constrained DOF positions (k, 2) to their
        values (k, 5); constrained values then follow moving boundary nodes."""
        self.mesh = mesh
        self.q_bc = q_bc
        self.params = params
        self.space = fem.P2Space(mesh)
        self.asm = fem.PhysicsAssembler(self.space, params)
        self.q_dofs = np.asarray(q_dofs, dtype=np.int64)
        self.q_values = np.asarray(q_values, dtype=float).reshape(len(self.q_dofs), 5)
        self.field = u_dofs is not None
        self.u_dofs = None if u_dofs is None else np.asarray(u_dofs, dtype=np.int64)
        self.u_values = None if u_values is None else np.asarray(u_values, dtype=float)
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        self.linear_tol = linear_tol
        self.log = log if log is not None else linalg.SolverLog()
        n = self.space.n_dofs
        self.q_constrained = np.zeros(n, dtype=bool)
        self.q_constrained[self.q_dofs] = True
        self._block_masks = None

    # -- constraints --------------------------------------------------------
    def bc_values(self, coords=None) -> np.ndarray:
        if self.q_bc is None:
            return self.q_values
        x = self.mesh.dof_coords(self.mesh.phys_coords if coords is None else coords)
        return np.asarray(self.q_bc(x[self.q_dofs]), dtype=float).reshape(len(self.q_dofs), 5)

    def impose(self, q: np.ndarray, coords=None) -> np.ndarray:
        q = q.copy()
        q[self.q_dofs] = self.bc_values(coords)
        return q

    def block_masks(self):
        if self._block_masks is None:
            pat = self.space.block_pattern
            cons = np.repeat(self.q_constrained, 5)
            kill = cons[pat.row_of] | cons[pat.indices]
            diag = pat.diag[cons[pat.row_of[pat.diag]]]
            self._block_masks = (kill, diag)
        return self._block_masks

    # -- potential ----------------------------------------------------------
    def solve_potential(self, q: np.ndarray, geo: fem.Geometry, u0=None) -> np.ndarray:
        n = self.space.n_dofs
        if not self.field:
            return np.zeros(n)
        sys_ = self.asm.maxwell(q, geo)
        sys_ = fem.apply_dirichlet(sys_, list(zip(self.u_dofs, self.u_values)))
        res = linalg.solve(sys_.matrix, sys_.rhs, tol=self.linear_tol, x0=u0, log=self.log, tag="maxwell")
        u = res.x
        u[self.u_dofs] = self.u_values
        return u

    # -- stage solve --------------------------------------------------------
    def mass_matrix(self, geo: fem.Geometry) -> sp.csr_matrix:
        return self.space.scalar_pattern.build(self.space.mass_local(geo))

    def stage_residual(self, Q, u, geo, vel, r_known, gdt, Ms):
        G = self.asm.rhs(Q, u, geo, vel)
        R = Ms @ Q - r_known - gdt * G
        R[self.q_dofs] = 0.0
        return R, G

    def newton_stage_solve(self, coords, vel, gdt: float, r_known: np.ndarray, guess: np.ndarray, u_guess=None):
        """Solve M_s Q - r_known - gdt*G(Q, u(Q)) = 0; returns (Q, u, G, iterations)."""
        geo = self.space.geometry(coords)
        Ms = self.mass_matrix(geo)
        # P2 vertex functions have zero mean, so scale by the mass diagonal
        mdiag = Ms.diagonal()
        bc = self.bc_values(coords)
        Q = guess.copy()
        Q[self.q_dofs] = bc
        u = self.solve_potential(Q, geo, u_guess)
        pat = self.space.block_pattern
        kill, diag = self.block_masks()
        for it in range(self.newton_maxit + 1):
            R, G = self.stage_residual(Q, u, geo, vel, r_known, gdt, Ms)
            scaled = float(np.abs(R / mdiag[:, None]).max())
            if not np.isfinite(scaled):
                raise StageFailure("non-finite stage residual")
            if scaled < self.newton_tol:
                return Q, u, G, it
            if it == self.newton_maxit:
                break
            vals = self.asm.jacobian_values(Q, geo, 1.0, gdt, vel)
            J = pat.build(vals)
            J.data[kill] = 0.0
            J.data[diag] = 1.0
            try:
                res = linalg.solve(J, -R.ravel(), tol=self.linear_tol, log=self.log, tag="newton")
            except ArithmeticError as exc:
                raise StageFailure(str(exc)) from exc
            Q = Q + res.x.reshape(Q.shape)
            Q[self.q_dofs] = bc
            u = self.solve_potential(Q, geo, u)
        raise StageFailure(f"Newton did not converge in {self.newton_maxit} iterations (residual {scaled:.3e})")

    def energy(self, q, u, coords=None) -> float:
        geo = self.space.geometry(coords)
        return self.asm.energy(q, u if self.field else None, geo)


def sdirk2_step(model: PhysicsModel, state: SimState, x_new: np.ndarray, dt: float,
                tableau: Sdirk2Tableau = SDIRK2):
    """One SDIRK2 step from state (mesh at t_n) to the mesh x_new at t_n + dt.

    Returns (q_2nd, q_1st, u_next, newton_iterations).
    """
    x0 = state.mesh.phys_coords
    vel = mm.mesh_velocity(x0, x_new, dt)
    moving = bool(np.any(vel != 0.0))
    vel_arg = vel if moving else None
    A, c = tableau.A, tableau.c
    geo0 = model.space.geometry(x0)
    z0 = model.mass_matrix(geo0) @ state.q
    Gs = []
    Q = state.q
    u = state.u
    iters = 0
    for s in range(2):
        xs = x_new if s == 1 else x0 + c[s] * dt * vel  # stiffly accurate: c_2 = 1
        r_known = z0 + dt * sum(A[s, j] * Gs[j] for j in range(s))
        Q, u, G, k = model.newton_stage_solve(xs, vel_arg, A[s, s] * dt, r_known, Q, u)
        G = G.copy()
        G[model.q_dofs] = 0.0
        Gs.append(G)
        iters += k
    q2 = Q
    dz = tableau.gamma * dt * (Gs[1] - Gs[0])
    dz[model.q_dofs] = 0.0
    geo1 = model.space.geometry(x_new)
    M1 = model.mass_matrix(geo1)
    dq = _mass_solve(model, M1, dz)
    q1 = q2 - dq
    q1[model.q_dofs] = q2[model.q_dofs]
    return q2, q1, u, iters


def _mass_solve(model: PhysicsModel, M: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    cons = [(d, 0.0) for d in model.q_dofs]
    out = np.zeros_like(rhs)
    if not np.any(rhs):
        return out
    sys_ = fem.apply_dirichlet(fem.AssembledSystem(M, rhs[:, 0]), cons)
    A = sys_.matrix
    P = linalg.ilu0(A)
    for i in range(rhs.shape[1]):
        b = rhs[:, i].copy()
        b[model.q_dofs] = 0.0
        if not np.any(b):
            continue
        res = linalg.bicgstab(A, b, P, tol=model.linear_tol)
        model.log.add("mass", res)
        out[:, i] = res.x
    out[model.q_dofs] = 0.0
    return out


def error_indicator(q2, q1, mesh: TriMesh, coords=None) -> np.ndarray:
    """E_i = sqrt(sum_j area_j e_ij^2) with e_ij the difference at the centroid of element j."""
    d = np.asarray(q2, dtype=float) - np.asarray(q1, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    area = np.abs(mesh.areas(coords))
    # P2 basis at the centroid: -1/9 at vertices, 4/9 at edge midpoints
    w = np.array([-1.0, -1.0, -1.0, 4.0, 4.0, 4.0]) / 9.0
    e = np.einsum("a,eai->ei", w, d[mesh.dofmap.elem_dofs])
    return np.sqrt((area[:, None] * e * e).sum(0))


@dataclass
class IntegratorOptions:
    controller: StepController = field(default_factory=StepController)
    mmpde: mm.MmpdeParams = field(default_factory=mm.MmpdeParams)
    frozen_mesh: bool = False
    tableau: Sdirk2Tableau = SDIRK2
    track_energy: bool = True
    max_retries: int = 30


def advance(model: PhysicsModel, state: SimState, opts: IntegratorOptions, stats: StepStats | None = None,
            dt_cap: float | None = None) -> SimState:
    """One accepted outer step: monitor, mesh move, SDIRK2, error control.

    Rejected attempts are retried with a smaller dt; the monitor is computed
    once and reused for the retries.
    """
    stats = stats if stats is not None else StepStats()
    t0 = _time.process_time()
    mesh = state.mesh
    if not opts.frozen_mesh:
        mon = mm.build_monitor(state.q, mesh, opts.mmpde, state.w_prev)
        w = mon.w
    else:
        w = None
    dt = state.dt if dt_cap is None else min(state.dt, dt_cap)
    ctl = opts.controller
    for _ in range(opts.max_retries):
        try:
            if w is None:
                x_new = mesh.phys_coords.copy()
            else:
                x_new = mm.mmpde_step(mesh, w, dt, opts.mmpde, log=model.log)
            q2, q1, u, its = sdirk2_step(model, state, x_new, dt, opts.tableau)
        except TangledMeshError:
            stats.tangled += 1
            stats.rejected += 1
            dt = _shrink(dt, 0.5, ctl)
            continue
        except StageFailure:
            stats.newton_failures += 1
            stats.rejected += 1
            dt = _shrink(dt, 0.25, ctl)
            continue
        E = error_indicator(q2, q1, mesh)
        E_max = float(E.max())
        accept, dt_next = adjust_dt(E_max, dt, ctl)
        if not accept:
            stats.rejected += 1
            dt = dt_next
            continue
        new_mesh = mesh.with_coords(x_new)
        rep = validate(new_mesh)
        if rep.min_jacobian <= 0:
            stats.tangled += 1
            stats.rejected += 1
            dt = _shrink(dt, 0.5, ctl)
            continue
        new = SimState(new_mesh, q2, u, state.t + dt, dt_next, None if w is None else w.copy())
        stats.accepted += 1
        stats.newton_iterations.append(its)
        stats.dt_history.append(dt)
        stats.error.append(E_max)
        stats.min_jacobian.append(rep.min_jacobian)
        if opts.track_energy:
            stats.energy.append(model.energy(q2, u, new_mesh.phys_coords))
        stats.cpu_time += _time.process_time() - t0
        return new
    raise StepSizeUnderflow("too many rejected attempts in one step")


def _shrink(dt: float, factor: float, ctl: StepController) -> float:
    if dt <= ctl.dt_min * (1 + 1e-12):
        raise StepSizeUnderflow(f"step size underflow at dt={dt:.3e}")
    return max(dt * factor, ctl.dt_min)


def initial_state(model: PhysicsModel, mesh: TriMesh, q0: np.ndarray, dt0: float) -> SimState:
    q = model.impose(q0, mesh.phys_coords)
    u = model.solve_potential(q, model.space.geometry(mesh.phys_coords))
    return SimState(mesh, q, u, 0.0, dt0, None)


def integrate(model: PhysicsModel, state: SimState, opts: IntegratorOptions, t_end: float,
              stats: StepStats | None = None, callback=None) -> SimState:
    """Advance until t_end, landing exactly on it."""
    stats = stats if stats is not None else StepStats()
    while state.t < t_end * (1 - 1e-12):
        state = advance(model, state, opts, stats, dt_cap=t_end - state.t)
        if callback is not None:
            callback(state, stats)
    return state


__all__ = [
    "Sdirk2Tableau", "SDIRK2", "StepController", "SimState", "StepStats", "PhysicsModel",
    "IntegratorOptions", "StageFailure", "StepSizeUnderflow", "adjust_dt", "advance",
    "error_indicator", "initial_state", "integrate", "sdirk2_linear", "sdirk2_step",
]
