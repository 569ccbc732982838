"""Experiment setups: the static +1/2 disclination and the perturbed Pi-cell."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from . import qtensor as qt
from .energy import MaterialParams
from .mesh import PointLocator, PointNotFoundError, TriMesh, build_structured


@dataclass(frozen=True)
class DefectConfig:
    d_index: float = 0.5
    half_width: float = 10.0  # in coherence lengths
    S_boundary: float | None = None  # None -> S_eq

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")


@dataclass(frozen=True)
class PiCellConfig:
    width: float = 2e-6
    thickness: float = 1e-6
    pretilt_deg: float = 6.0
    field_strength: float = 18e6
    perturb: bool = True
    perturb_deg: float = 1.0
    perturb_extent: float = 0.25  # vertical half-support, as a fraction of the thickness

    def __post_init__(self):
        if not (self.width > 0 and self.thickness > 0):
            raise ValueError("width and thickness must be positive")
        if not abs(self.pretilt_deg) < 90:
            raise ValueError("|pretilt_deg| must be below 90")


@dataclass
class ProblemSetup:
    mesh: TriMesh
    q0: np.ndarray  # (ndof, 5)
    q_dofs: np.ndarray
    q_values: np.ndarray
    u_dofs: np.ndarray | None = None
    u_values: np.ndarray | None = None
    q_bc: object = None  # optional callable: points (k, 2) -> constrained values (k, 5)


def defect_director(theta, d_index) -> np.ndarray:
    """In-plane director (cos(d theta), sin(d theta), 0) in plane coordinates."""
    theta = np.asarray(theta, dtype=float)
    a = d_index * theta
    return np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=-1)


def inplane_q(angle, S) -> np.ndarray:
    """Uniaxial tensor for an in-plane director at the given angle from the x axis."""
    angle = np.asarray(angle, dtype=float)
    n = np.stack([np.cos(angle), np.sin(angle), np.zeros_like(angle)], axis=-1)
    return qt.uniaxial_from_director(qt.plane_to_tensor(n), S)


def defect_mesh(n: int, cfg: DefectConfig = DefectConfig()) -> TriMesh:
    h = cfg.half_width
    return build_structured(n, n, (-h, h, -h, h))


def defect_initial_and_boundary(mesh: TriMesh, cfg: DefectConfig, params: MaterialParams) -> ProblemSetup:
    """Director angle d_i * atan2(y, x) everywhere with S = S_eq; boundary DOFs pinned.

    The origin (theta undefined) takes theta = 0. No field is applied, so no
    potential constraints are returned.
    """
    S = params.S_eq if cfg.S_boundary is None else cfg.S_boundary

    def field(x):
        r2 = (x * x).sum(1)
        theta = np.where(r2 > 0, np.arctan2(x[:, 1], x[:, 0]), 0.0)
        q = qt.uniaxial_from_director(qt.plane_to_tensor(defect_director(theta, cfg.d_index)), S)
        q[:, 1] = 0.0
        q[:, 4] = 0.0
        return q

    q0 = field(mesh.dof_coords())
    bd = np.sort(mesh.boundary_dofs())
    # boundary data follow the polar angle of the (possibly sliding) boundary nodes
    return ProblemSetup(mesh, q0, bd, q0[bd].copy(), q_bc=field)


def picell_mesh(nx: int, ny: int, cfg: PiCellConfig, zeta: float) -> TriMesh:
    """Structured mesh of the cell in coherence-length units."""
    return build_structured(nx, ny, (0.0, cfg.width / zeta, 0.0, cfg.thickness / zeta))


def picell_tilt(x, y, cfg: PiCellConfig, perturbed: bool | None = None, zeta: float = 1.0) -> np.ndarray:
    """Initial tilt angle (radians) at points given in coherence-length units."""
    p = cfg.width / zeta
    d = cfg.thickness / zeta
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tilt = np.radians(cfg.pretilt_deg) * (2.0 * y / d - 1.0)
    if cfg.perturb if perturbed is None else perturbed:
        half = cfg.perturb_extent * d
        dist = np.abs(y - 0.5 * d)
        profile = np.where(dist < half, np.cos(0.5 * np.pi * dist / half), 0.0)
        tilt = tilt + np.radians(cfg.perturb_deg) * np.sin(2.0 * np.pi * x / p) * profile
    return tilt


def picell_initial(mesh: TriMesh, cfg: PiCellConfig, params: MaterialParams, zeta: float = 1.0,
                   potential_scale: float = 1.0) -> ProblemSetup:
    """Splay-state initial data, plate anchoring and electrode potentials.

    Coordinates are in units of ``zeta`` (metres per mesh unit); the top
    electrode value field_strength*thickness is divided by
    ``potential_scale`` to give the nondimensional potential.
    """
    x = mesh.dof_coords()
    tilt = picell_tilt(x[:, 0], x[:, 1], cfg, zeta=zeta)
    q0 = inplane_q(tilt, params.S_eq)
    bottom = mesh.segment_dofs("bottom")
    top = mesh.segment_dofs("top")
    plates = np.unique(np.concatenate([bottom, top]))
    # plates hold the unperturbed pretilt exactly
    plate_tilt = picell_tilt(x[plates, 0], x[plates, 1], cfg, perturbed=False, zeta=zeta)
    q_vals = inplane_q(plate_tilt, params.S_eq)
    q0[plates] = q_vals
    V = cfg.field_strength * cfg.thickness / potential_scale
    u_dofs = np.concatenate([np.unique(bottom), np.unique(top)])
    u_vals = np.concatenate([np.zeros(len(np.unique(bottom))), np.full(len(np.unique(top)), V)])
    return ProblemSetup(mesh, q0, plates, q_vals, u_dofs, u_vals)


# -- defect detection ------------------------------------------------------------

@dataclass(frozen=True)
class DetectThresholds:
    s_max: float = 0.35
    beta_min: float = 0.9
    radius: float = 3.0  # beta search radius, in coordinate units
    circuit: float = 2.0  # winding circuit radius
    merge: float = 1.0


@dataclass
class Defect:
    position: np.ndarray
    charge: float
    S: float


def winding_number(mesh: TriMesh, q, center, radius: float, samples: int = 48, locator=None) -> float:
    """Total rotation of the in-plane director around a circle, in turns."""
    ang = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    pts = np.asarray(center)[None, :] + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    vals = fem.evaluate_at(mesh, q, pts, locator=locator)
    phi = qt.inplane_angle(vals)
    d = np.diff(np.append(phi, phi[0]))
    d = (d + 0.5 * np.pi) % np.pi - 0.5 * np.pi
    return float(d.sum() / (2.0 * np.pi))


def detect_defects(q, mesh: TriMesh, thresholds: DetectThresholds = DetectThresholds()) -> list[Defect]:
    """Local minima of S below threshold with a strongly biaxial neighbourhood.

    The sign estimate is the winding of the in-plane director on a circle
    around each core, rounded to the nearest half.
    """
    q = np.asarray(q, dtype=float)
    nv = mesh.n_vertices
    x = mesh.phys_coords
    S = qt.order_parameter(q[:nv])
    beta = qt.biaxiality_field(q[:nv])
    nb = mesh.vertex_neighbours()
    cand = []
    for v in np.flatnonzero(S < thresholds.s_max):
        if len(nb[v]) and np.all((S[v] < S[nb[v]]) | ((S[v] == S[nb[v]]) & (v < nb[v]))):
            near = ((x - x[v]) ** 2).sum(1) <= thresholds.radius**2
            if beta[near].max() >= thresholds.beta_min:
                cand.append(v)
    cand.sort(key=lambda v: S[v])
    kept: list[int] = []
    for v in cand:
        if all(np.linalg.norm(x[v] - x[k]) > thresholds.merge for k in kept):
            kept.append(v)
    out = []
    loc = PointLocator(mesh)
    lo, hi = x.min(0), x.max(0)
    for v in kept:
        c = x[v]
        r = thresholds.circuit
        others = [np.linalg.norm(c - x[k]) for k in kept if k != v]
        if others:
            r = min(r, 0.4 * min(others))
        r = min(r, 0.99 * float(np.min(np.concatenate([c - lo, hi - c]))))
        try:
            wn = winding_number(mesh, q, c, r, locator=loc) if r > 0 else 0.0
        except PointNotFoundError:
            wn = 0.0
        out.append(Defect(c.copy(), 0.5 * np.round(2.0 * wn), float(S[v])))
    return out
