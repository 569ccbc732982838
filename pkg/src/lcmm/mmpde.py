"""Mesh movement: monitor functions, smoothing, and the Winslow-type MMPDE.

The interior mesh is advanced by one backward-Euler step of

    tau * (w / P) dx/dt = div_xi (w grad_xi x)

discretised with linear elements on the computational mesh, with the
diffusion coefficient frozen at t^n. At steady state in one dimension this is
the equidistribution relation w x_xi = const. The literal non-divergence
form with coefficients a..e (``scheme="awinslow"``) is available for
comparison; :func:`winslow_coefficients` evaluates those coefficients.

Boundary nodes slide along their (straight) segment according to the 1-D
analogue, with corners fixed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from . import qtensor as qt
from .mesh import SEGMENTS, TangledMeshError, TriMesh

MONITOR_KINDS = ("AL", "BM1a", "BM1b", "BM2b")
# monitor formula and input function for each Table-1 combination
MONITOR_TABLE = {
    "AL": ("arclength", "trace"),
    "BM1a": ("bm1", "trace"),
    "BM1b": ("bm1", "biaxiality"),
    "BM2b": ("bm2", "biaxiality"),
}


@dataclass(frozen=True)
class MmpdeParams:
    tau: float = 1.0
    m_exp: float = 3.0
    omega: float = 0.8
    smooth_sweeps: int = 2
    monitor_kind: str = "BM2b"
    balance: str = "w"  # P = w ("w") or P = 1 ("one")
    monitor_length: float | None = None
    scheme: str = "diffusion"
    tol: float = 1e-10

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie in (0, 1)")
        if self.m_exp < 1:
            raise ValueError("m_exp must be >= 1")
        if self.smooth_sweeps < 0:
            raise ValueError("smooth_sweeps must be >= 0")
        if self.monitor_kind not in MONITOR_KINDS:
            raise ValueError(f"unknown monitor kind {self.monitor_kind!r}")
        if self.balance not in ("w", "one"):
            raise ValueError("balance must be 'w' or 'one'")
        if self.scheme not in ("diffusion", "awinslow"):
            raise ValueError("scheme must be 'diffusion' or 'awinslow'")


@dataclass
class MonitorField:
    w: np.ndarray
    history: np.ndarray | None = None
    alpha: float = 1.0


# -- input functions ----------------------------------------------------------

def _vertex_q(q, mesh: TriMesh) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[0] == 5 and q.shape[-1] != 5:
        q = q.T
    return q[: mesh.n_vertices]


def input_trace(q, mesh: TriMesh) -> np.ndarray:
    return qt.trace_q2(_vertex_q(q, mesh))


def input_biaxiality(q, mesh: TriMesh) -> np.ndarray:
    return qt.biaxiality_field(_vertex_q(q, mesh))


def input_function(kind: str, q, mesh: TriMesh) -> np.ndarray:
    src = MONITOR_TABLE[kind][1]
    return input_trace(q, mesh) if src == "trace" else input_biaxiality(q, mesh)


# -- derivative recovery -----------------------------------------------------

def _p1_gradients(mesh: TriMesh, coords) -> tuple[np.ndarray, np.ndarray]:
    """Per-element P1 basis gradients (E, 3, 2) and signed areas."""
    p = coords[mesh.elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g = np.empty((len(det), 3, 2))
    # gradient of barycentric l1 and l2 are the rows of T^{-1}
    g[:, 1, 0] = d2[:, 1] / det
    g[:, 1, 1] = -d2[:, 0] / det
    g[:, 2, 0] = -d1[:, 1] / det
    g[:, 2, 1] = d1[:, 0] / det
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g, 0.5 * det


def _recover(values, mesh, g, area):
    ge = np.einsum("eak,ea->ek", g, values[mesh.elements])
    num = np.zeros((mesh.n_vertices, 2))
    den = np.zeros(mesh.n_vertices)
    for a in range(3):
        v = mesh.elements[:, a]
        np.add.at(num, v, area[:, None] * ge)
        np.add.at(den, v, area)
    return num / den[:, None]


_STENCILS: dict = {}


def _boundary_stencils(mesh: TriMesh) -> list:
    """For each boundary vertex, the interior vertices within two edge rings."""
    key = id(mesh.elements)
    hit = _STENCILS.get(key)
    if hit is not None and hit[0] is mesh.elements:
        return hit[1]
    nb = mesh.vertex_neighbours()
    interior = ~mesh.boundary_vertex
    out = []
    for v in np.flatnonzero(mesh.boundary_vertex):
        ring = set(nb[v].tolist())
        for u in list(ring):
            ring.update(nb[u].tolist())
        cand = np.array(sorted(u for u in ring if interior[u]), dtype=int)
        out.append((v, cand))
    _STENCILS[key] = (mesh.elements, out)
    return out


def _extrapolate_boundary(values, mesh, x):
    """Replace boundary values by a linear least-squares fit through interior neighbours."""
    out = values.copy()
    for v, cand in _boundary_stencils(mesh):
        if len(cand) < 3:
            continue
        A = np.column_stack([np.ones(len(cand)), x[cand] - x[v]])
        coef, *_ = np.linalg.lstsq(A, values[cand], rcond=None)
        out[v] = coef[0]
    return out


def recover_derivatives(field, mesh: TriMesh, coords=None, length: float = 1.0):
    """Lumped-mass L2 recovery of the gradient and Hessian of a vertex field.

    Boundary values, where the one-sided average is only first-order, are
    replaced by linear extrapolation from nearby interior vertices.
    Derivatives are taken with respect to x / length. Returns (grad (V, 2),
    hess (V, 3)) with the Hessian packed as (Hxx, Hxy, Hyy).
    """
    x = (mesh.phys_coords if coords is None else coords) / length
    g, area = _p1_gradients(mesh, x)
    field = np.asarray(field, dtype=float)
    grad = _extrapolate_boundary(_recover(field, mesh, g, area), mesh, x)
    hx = _extrapolate_boundary(_recover(grad[:, 0], mesh, g, area), mesh, x)
    hy = _extrapolate_boundary(_recover(grad[:, 1], mesh, g, area), mesh, x)
    hess = np.column_stack([hx[:, 0], 0.5 * (hx[:, 1] + hy[:, 0]), hy[:, 1]])
    return grad, hess


# -- monitor functions ---------------------------------------------------------

def domain_length(mesh: TriMesh) -> float:
    ext = mesh.ref_coords.max(0) - mesh.ref_coords.min(0)
    return float(ext.max())


def _p1_mean(values, mesh, coords) -> float:
    area = mesh.areas(coords)
    return float((area * values[mesh.elements].mean(1)).sum() / area.sum())


def monitor_evaluate(T, mesh: TriMesh, params: MmpdeParams, coords=None) -> MonitorField:
    """Raw monitor values at the vertices for the given input field."""
    x = mesh.phys_coords if coords is None else coords
    length = params.monitor_length or domain_length(mesh)
    form = MONITOR_TABLE[params.monitor_kind][0]
    grad, hess = recover_derivatives(T, mesh, x, length)
    if form == "arclength":
        return MonitorField(np.sqrt(1.0 + (grad * grad).sum(1)), alpha=1.0)
    if form == "bm1":
        mag = np.sqrt((grad * grad).sum(1))
    else:
        mag = np.sqrt(hess[:, 0] ** 2 + 2.0 * hess[:, 1] ** 2 + hess[:, 2] ** 2)
    I = mag ** (1.0 / params.m_exp)
    alpha = max(1.0, _p1_mean(I, mesh, x))
    return MonitorField(alpha + I, alpha=alpha)


def smooth_spatial(w, mesh: TriMesh, sweeps: int) -> np.ndarray:
    """Average w over the cells sharing each vertex, measured in the xi domain."""
    if sweeps < 0:
        raise ValueError("sweeps must be >= 0")
    w = np.array(getattr(w, "w", w), dtype=float)
    area = np.abs(mesh.areas(mesh.ref_coords))
    den = np.zeros(mesh.n_vertices)
    for a in range(3):
        np.add.at(den, mesh.elements[:, a], area)
    for _ in range(sweeps):
        cell = area * w[mesh.elements].mean(1)
        num = np.zeros(mesh.n_vertices)
        for a in range(3):
            np.add.at(num, mesh.elements[:, a], cell)
        w = num / den
    return w


def smooth_temporal(w_now, w_prev, omega: float) -> np.ndarray:
    w_now = np.asarray(w_now, dtype=float)
    if w_prev is None:
        return w_now.copy()
    w_prev = np.asarray(w_prev, dtype=float)
    if w_prev.shape != w_now.shape:
        raise ValueError("monitor histories differ in size")
    return (1.0 - omega) * w_now + omega * w_prev


def build_monitor(q, mesh: TriMesh, params: MmpdeParams, w_prev=None) -> MonitorField:
    """Input function, monitor, spatial then temporal smoothing."""
    T = input_function(params.monitor_kind, q, mesh)
    raw = monitor_evaluate(T, mesh, params)
    w = smooth_spatial(raw.w, mesh, params.smooth_sweeps)
    w = smooth_temporal(w, w_prev, params.omega)
    return MonitorField(w, history=None if w_prev is None else np.asarray(w_prev), alpha=raw.alpha)


# -- MMPDE ----------------------------------------------------------------------

def winslow_coefficients(mesh: TriMesh, w, coords=None):
    """Element coefficients (a, b, c, d, e) of the x-form Winslow MMPDE.

    The metric terms use the piecewise-linear map xi -> x; w is taken at the
    element centroid and its xi-derivatives from the linear interpolant.
    """
    x = mesh.phys_coords if coords is None else coords
    gxi, _ = _p1_gradients(mesh, mesh.ref_coords)
    F = np.einsum("eak,eaj->ejk", gxi, x[mesh.elements])  # F[j,k] = dx_j/dxi_k
    xs, xe = F[:, :, 0], F[:, :, 1]
    J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    w = np.asarray(w, dtype=float)
    wc = w[mesh.elements].mean(1)
    dw = np.einsum("eak,ea->ek", gxi, w[mesh.elements])
    g11 = (xs * xs).sum(1)
    g12 = (xs * xe).sum(1)
    g22 = (xe * xe).sum(1)
    a = g22 / (wc * J * J)
    b = -2.0 * g12 / (wc * J * J)
    c = g11 / (wc * J * J)
    d = (dw[:, 0] * g22 - dw[:, 1] * g12) / (wc * J) ** 2
    e = (-dw[:, 0] * g12 + dw[:, 1] * g11) / (wc * J) ** 2
    return a, b, c, d, e


def _lumped(mesh: TriMesh, weight) -> np.ndarray:
    area = np.abs(mesh.areas(mesh.ref_coords))
    m = np.zeros(mesh.n_vertices)
    we = weight[mesh.elements]
    for a in range(3):
        np.add.at(m, mesh.elements[:, a], area * we[:, a] / 3.0)
    return m


def _pattern_matrix(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    el = mesh.elements
    rows = np.repeat(el[:, :, None], 3, axis=2).ravel()
    cols = np.repeat(el[:, None, :], 3, axis=1).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def mmpde_operator(mesh: TriMesh, w, params: MmpdeParams, coords=None) -> sp.csr_matrix:
    """Spatial operator K with the semi-discrete MMPDE written as tau*Mw*xdot = -K x."""
    w = np.asarray(w, dtype=float)
    g, area = _p1_gradients(mesh, mesh.ref_coords)
    area = np.abs(area)
    if params.scheme == "diffusion":
        we = w[mesh.elements].mean(1)
        local = np.einsum("e,eak,ebk->eab", area * we, g, g)
        return _pattern_matrix(mesh, local)
    # literal weak form: int x_k d_l(C_kl v / w) - (d x_xi + e x_eta) v, with
    # C = w_c [[a, b/2], [b/2, c]] constant per element and 1/w varying linearly in w
    a, b, c, d, e = winslow_coefficients(mesh, w, coords)
    wc = w[mesh.elements].mean(1)
    C0 = np.empty((mesh.n_elements, 2, 2))
    C0[:, 0, 0] = a * wc
    C0[:, 0, 1] = C0[:, 1, 0] = 0.5 * b * wc
    C0[:, 1, 1] = c * wc
    we_v = w[mesh.elements]
    dw = np.einsum("eak,ea->ek", g, we_v)
    conv = d[:, None] * g[:, :, 0] + e[:, None] * g[:, :, 1]  # (E, b)
    local = np.zeros((mesh.n_elements, 3, 3))
    for lam in np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]):
        wq = we_v @ lam
        dinv = -dw / (wq * wq)[:, None]
        diff = np.einsum("eal,ekl,ebk->eab", g, C0, g) / wq[:, None, None]
        grad_w = lam[None, :, None] * np.einsum("ebk,ekl,el->eb", g, C0, dinv)[:, None, :]
        local += (area / 3.0)[:, None, None] * (diff + grad_w - lam[None, :, None] * conv[:, None, :])
    return _pattern_matrix(mesh, local)


def mmpde_step(mesh: TriMesh, w, dt: float, params: MmpdeParams, boundary_coords=None,
               log: linalg.SolverLog | None = None) -> np.ndarray:
    """One backward-Euler MMPDE step; returns the new physical coordinates.

    Boundary vertices are set from ``boundary_coords`` (default: from
    :func:`boundary_move`). Raises :class:`TangledMeshError` if the result has
    a non-positive element area.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = np.asarray(getattr(w, "w", w), dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("monitor must be positive and finite")
    x0 = mesh.phys_coords
    xb = boundary_move(mesh, w, dt, params) if boundary_coords is None else boundary_coords
    bmask = mesh.boundary_vertex
    K = mmpde_operator(mesh, w, params)
    weight = w if params.balance == "w" else np.ones_like(w)
    Mw = _lumped(mesh, weight)
    A = (sp.diags(params.tau * Mw / dt) + K).tocsr()
    rhs = (params.tau * Mw / dt)[:, None] * x0
    fixed = np.flatnonzero(bmask)
    free = np.flatnonzero(~bmask)
    x_new = x0.copy()
    x_new[fixed] = xb[fixed]
    Aff = A[free][:, free]
    Afb = A[free][:, fixed]
    M = linalg.ilu0(Aff)
    for k in range(2):
        b = rhs[free, k] - Afb @ x_new[fixed, k]
        res = linalg.bicgstab(Aff, b, M, tol=params.tol, maxit=2000, x0=x0[free, k])
        if log is not None:
            log.add("mmpde", res)
        if not res.converged:
            raise ArithmeticError("MMPDE linear solve did not converge")
        x_new[free, k] = res.x
    area = mesh.areas(x_new)
    bad = np.flatnonzero(area <= 0)
    if len(bad):
        raise TangledMeshError(bad)
    return x_new


def boundary_move(mesh: TriMesh, w, dt: float, params: MmpdeParams) -> np.ndarray:
    """Slide boundary vertices along their straight segments by a 1-D MMPDE step.

    Returns a full coordinate array in which only boundary vertices changed.
    """
    w = np.asarray(getattr(w, "w", w), dtype=float)
    x = mesh.phys_coords.copy()
    if not mesh.segments:
        return x
    for name in SEGMENTS:
        if name not in mesh.segments:
            continue
        seg = np.asarray(mesh.segments[name])
        if len(seg) < 3:
            continue
        p0, p1 = x[seg[0]], x[seg[-1]]
        L = np.linalg.norm(p1 - p0)
        t = (p1 - p0) / L
        u = (x[seg] - p0) @ t
        s = np.linalg.norm(mesh.ref_coords[seg] - mesh.ref_coords[seg[0]], axis=1)
        h = np.diff(s)
        we = 0.5 * (w[seg[:-1]] + w[seg[1:]])
        n = len(seg)
        k = we / h
        main = np.zeros(n)
        main[:-1] += k
        main[1:] += k
        weight = w[seg] if params.balance == "w" else np.ones(n)
        mass = np.zeros(n)
        mass[:-1] += 0.5 * h
        mass[1:] += 0.5 * h
        mass *= weight * params.tau / dt
        A = sp.diags([-k, main + mass, -k], [-1, 0, 1], format="csr")
        rhs = mass * u
        # corners are fixed
        inner = slice(1, n - 1)
        rhs_i = rhs[inner].copy()
        rhs_i[0] += k[0] * u[0]
        rhs_i[-1] += k[-1] * u[-1]
        u_new = u.copy()
        u_new[inner] = sp.linalg.spsolve(A[inner, inner].tocsc(), rhs_i)
        if np.any(np.diff(u_new) <= 0):
            raise TangledMeshError(np.array([], dtype=int), f"boundary node ordering inverted on {name}")
        x[seg[1:-1]] = p0 + u_new[1:-1, None] * t
    return x


def mesh_velocity(old_coords, new_coords, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (np.asarray(new_coords, dtype=float) - np.asarray(old_coords, dtype=float)) / dt
