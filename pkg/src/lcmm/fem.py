"""Quadratic Lagrange elements on straight-edged triangles: quadrature, basis,
and assembly of the physical system d/dt(M q_i) = G_i, C(q, u) = 0.

With mesh velocity xdot (piecewise linear), the load vector is

    G_i[a] = int div(xdot q_i) v_a - int Gamma_i . grad v_a - int f_i v_a

where (f_i, Gamma_i) are the rescaled derivatives of the bulk energy. The
sign of the flux term is the one for which, on a frozen mesh with fixed
Dirichlet data, the discrete free energy is non-increasing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import energy as en
from .mesh import TangledMeshError, TriMesh


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # barycentric (n, 3)
    weights: np.ndarray  # sum to the reference area 1/2
    degree: int


def _seven_point() -> QuadratureRule:
    r = np.sqrt(15.0)
    a1, a2 = (6.0 - r) / 21.0, (6.0 + r) / 21.0
    w1, w2 = (155.0 - r) / 1200.0, (155.0 + r) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 5)


QUAD7 = _seven_point()

# vertex-only rule, used for lumped P1 masses
QUAD_VERTEX = QuadratureRule(np.eye(3), np.full(3, 1.0 / 6.0), 1)


def p2_basis(lam) -> np.ndarray:
    """P2 shape functions at barycentric points (..., 3) -> (..., 6).

    Order: three vertices, then midpoints of edges (0,1), (1,2), (2,0).
    """
    lam = np.asarray(lam, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0],
        axis=-1,
    )


def p2_basis_grad(lam) -> np.ndarray:
    """Gradients with respect to reference coordinates (r, s) = (l1, l2): (..., 6, 2)."""
    lam = np.asarray(lam, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    # dl0/dr = dl0/ds = -1, dl1/dr = 1, dl2/ds = 1
    dr = np.stack([-(4 * l0 - 1), 4 * l1 - 1, 0 * l2, 4 * (l0 - l1), 4 * l2, -4 * l2], axis=-1)
    ds = np.stack([-(4 * l0 - 1), 0 * l1, 4 * l2 - 1, -4 * l1, 4 * l1, 4 * (l0 - l2)], axis=-1)
    return np.stack([dr, ds], axis=-1)


P1_GRAD_REF = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


class Pattern:
    """Fixed sparsity pattern with a precomputed scatter map from element entries to CSR data."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        keys = rows * n + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self.n = n
        self.scatter = inv
        self.indices = (uniq % n).astype(np.int32)
        r = uniq // n
        self.indptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(self.indptr, r + 1, 1)
        self.indptr = np.cumsum(self.indptr).astype(np.int32)
        self.row_of = r
        self.nnz = len(uniq)
        self.diag = np.flatnonzero(self.row_of == self.indices)

    def build(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.scatter, weights=np.asarray(values).ravel(), minlength=self.nnz)
        A = sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))
        A.has_sorted_indices = True
        return A


@dataclass
class Geometry:
    area: np.ndarray  # (E,)
    inv: np.ndarray  # (E, 2, 2) inverse of [x1-x0, x2-x0]
    grad: np.ndarray  # (E, nq, 6, 2) physical P2 gradients at quadrature points
    W: np.ndarray  # (E, nq) quadrature weights times 2*area
    p1_grad: np.ndarray  # (E, 3, 2) physical P1 gradients


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet: list = field(default_factory=list)


class P2Space:
    """Quadratic Lagrange space on a fixed-connectivity mesh; geometry from supplied coordinates."""

    def __init__(self, mesh: TriMesh, rule: QuadratureRule = QUAD7):
        self.mesh = mesh
        self.dofmap = mesh.dofmap
        self.rule = rule
        self.phi = p2_basis(rule.points)
        self.dphi = p2_basis_grad(rule.points)
        self.n_dofs = self.dofmap.n_dofs
        d = self.dofmap.elem_dofs
        self.scalar_pattern = Pattern(
            np.repeat(d[:, :, None], 6, axis=2), np.repeat(d[:, None, :], 6, axis=1), self.n_dofs
        )
        self._block_pattern = None

    @property
    def block_pattern(self) -> Pattern:
        """Pattern for the 5-field system, node-major ordering 5*dof + component."""
        if self._block_pattern is None:
            d = self.dofmap.elem_dofs
            comp = np.arange(5)
            rows = 5 * d[:, :, None, None, None] + comp[None, None, None, :, None]
            cols = 5 * d[:, None, :, None, None] + comp[None, None, None, None, :]
            rows, cols = np.broadcast_arrays(rows, cols)
            self._block_pattern = Pattern(rows, cols, 5 * self.n_dofs)
        return self._block_pattern

    def geometry(self, coords=None, check: bool = True) -> Geometry:
        x = self.mesh.phys_coords if coords is None else coords
        p = x[self.mesh.elements]
        T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns
        det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
        if check and np.any(det <= 0):
            raise TangledMeshError(np.flatnonzero(det <= 0))
        inv = np.empty_like(T)
        inv[:, 0, 0] = T[:, 1, 1] / det
        inv[:, 1, 1] = T[:, 0, 0] / det
        inv[:, 0, 1] = -T[:, 0, 1] / det
        inv[:, 1, 0] = -T[:, 1, 0] / det
        grad = np.einsum("qak,ekj->eqaj", self.dphi, inv)
        W = det[:, None] * self.rule.weights[None, :]
        p1 = np.einsum("ak,ekj->eaj", P1_GRAD_REF, inv)
        return Geometry(area=0.5 * det, inv=inv, grad=grad, W=W, p1_grad=p1)

    # -- field evaluation --------------------------------------------------
    def values(self, u: np.ndarray) -> np.ndarray:
        """Values at quadrature points; u is (ndof,) or (ndof, k)."""
        ue = u[self.dofmap.elem_dofs]
        if ue.ndim == 2:
            return ue @ self.phi.T
        return np.einsum("qa,eai->eqi", self.phi, ue)

    def gradients(self, u: np.ndarray, geo: Geometry) -> np.ndarray:
        ue = u[self.dofmap.elem_dofs]
        if ue.ndim == 2:
            return np.einsum("eqak,ea->eqk", geo.grad, ue)
        return np.einsum("eqak,eai->eqik", geo.grad, ue)

    def integrate(self, values_at_quad: np.ndarray, geo: Geometry) -> float:
        return float((geo.W * values_at_quad).sum())

    # -- scatter helpers -----------------------------------------------------
    def scatter_vector(self, local: np.ndarray) -> np.ndarray:
        """Sum element vectors (E, 6) or (E, 6, k) into global arrays."""
        d = self.dofmap.elem_dofs.ravel()
        if local.ndim == 2:
            return np.bincount(d, weights=local.ravel(), minlength=self.n_dofs)
        k = local.shape[2]
        out = np.empty((self.n_dofs, k))
        flat = local.reshape(-1, k)
        for i in range(k):
            out[:, i] = np.bincount(d, weights=flat[:, i], minlength=self.n_dofs)
        return out

    # -- matrices ------------------------------------------------------------
    def mass_local(self, geo: Geometry, weight=None) -> np.ndarray:
        W = geo.W if weight is None else geo.W * weight
        return np.einsum("eq,qa,qb->eab", W, self.phi, self.phi)

    def stiffness_local(self, geo: Geometry, coef=None) -> np.ndarray:
        """Element matrices of int (A grad v_b) . grad v_a; coef (E, nq, 2, 2) or None for identity."""
        if coef is None:
            return np.einsum("eq,eqak,eqbk->eab", geo.W, geo.grad, geo.grad)
        return np.einsum("eq,eqak,eqkl,eqbl->eab", geo.W, geo.grad, coef, geo.grad)

    def motion_local(self, geo: Geometry, vel: np.ndarray) -> np.ndarray:
        """Element matrices of int div(xdot v_b) v_a for P1 vertex velocities (V, 2)."""
        ve = vel[self.mesh.elements]  # (E, 3, 2)
        div = np.einsum("eak,eak->e", geo.p1_grad, ve)
        vq = np.einsum("qa,eak->eqk", self.rule.points, ve)
        conv = np.einsum("eqk,eqbk->eqb", vq, geo.grad)
        integrand = div[:, None, None] * self.phi[None, :, :] + conv  # (E, nq, b)
        return np.einsum("eq,qa,eqb->eab", geo.W, self.phi, integrand)


def assemble_mass(mesh: TriMesh, space: P2Space | None = None, coords=None) -> sp.csr_matrix:
    space = space or P2Space(mesh)
    geo = space.geometry(coords)
    return space.scalar_pattern.build(space.mass_local(geo))


def electric_field(space: P2Space, U: np.ndarray, geo: Geometry) -> np.ndarray:
    return -space.gradients(U, geo)


class PhysicsAssembler:
    """Assembly of G_i, its Jacobian, the Maxwell system and the discrete energy."""

    def __init__(self, space: P2Space, params: en.MaterialParams):
        self.space = space
        self.params = params
        self.mix = en.mixing_matrix(params.nu)
        # elastic part of dGamma_i/d(grad q_j)
        Lh = params.L * np.array(
            [[2.0, 0, 0, 1, 0], [0, 2, 0, 0, 0], [0, 0, 2, 0, 0], [1, 0, 0, 2, 0], [0, 0, 0, 0, 2]]
        )
        self.elastic_coupling = self.mix @ Lh

    def pointwise(self, q: np.ndarray, U: np.ndarray | None, geo: Geometry):
        sp_ = self.space
        qq = sp_.values(q)
        gq = sp_.gradients(q, geo)
        if U is None:
            E = np.zeros(qq.shape[:2] + (2,))
        else:
            E = electric_field(sp_, U, geo)
        return qq, gq, E

    def rhs(self, q: np.ndarray, U: np.ndarray | None, geo: Geometry, vel: np.ndarray | None = None) -> np.ndarray:
        """Load vectors G, shape (ndof, 5)."""
        sp_ = self.space
        qq, gq, E = self.pointwise(q, U, geo)
        fh, Gh = en.bulk_derivatives(qq, gq, E, self.params)
        f, G = en.scaled_rhs(fh, Gh, self.params)
        local = -np.einsum("eq,qa,eqi->eai", geo.W, sp_.phi, f)
        local -= np.einsum("eq,eqik,eqak->eai", geo.W, G, geo.grad)
        if vel is not None:
            local += self.motion_term_local(q, geo, vel)
        return sp_.scatter_vector(local)

    def motion_term_local(self, q, geo, vel):
        sp_ = self.space
        Nl = sp_.motion_local(geo, vel)
        qe = q[sp_.dofmap.elem_dofs]
        return np.einsum("eab,ebi->eai", Nl, qe)

    def jacobian_values(self, q, geo: Geometry, mass_coef: float, g_coef: float, vel=None) -> np.ndarray:
        """Element entries of mass_coef * (M x I5) - g_coef * dG/dq in block-pattern order."""
        sp_ = self.space
        qq = sp_.values(q)
        H = en.thermotropic_hessian(qq, self.params)
        Hm = np.einsum("ij,eqjk->eqik", self.mix, H)
        loc = np.einsum("eq,qa,qb,eqij->eabij", geo.W, sp_.phi, sp_.phi, Hm) * g_coef
        Ml = sp_.mass_local(geo)
        K = sp_.stiffness_local(geo)
        scal = mass_coef * Ml
        if vel is not None:
            scal = scal - g_coef * sp_.motion_local(geo, vel)
        I5 = np.eye(5)
        loc += scal[:, :, :, None, None] * I5
        loc += g_coef * K[:, :, :, None, None] * self.elastic_coupling
        return loc

    def maxwell(self, q: np.ndarray, geo: Geometry) -> AssembledSystem:
        """int (eps_bar I + eps_a Q_plane) grad U . grad v = int e_flexo (div Q) . grad v."""
        p = self.params
        sp_ = self.space
        qq = sp_.values(q)
        coef = np.zeros(qq.shape[:2] + (2, 2))
        qxx = qq[..., 0]
        qxy = qq[..., 2]
        qyy = -qq[..., 0] - qq[..., 3]
        coef[..., 0, 0] = p.eps0 * (p.eps_bar + p.eps_a * qxx)
        coef[..., 1, 1] = p.eps0 * (p.eps_bar + p.eps_a * qyy)
        coef[..., 0, 1] = coef[..., 1, 0] = p.eps0 * p.eps_a * qxy
        A = sp_.scalar_pattern.build(sp_.stiffness_local(geo, coef))
        if p.e_flexo != 0.0:
            gq = sp_.gradients(q, geo)
            div = en._plane_divergence(gq)
            b = sp_.scatter_vector(p.e_flexo * np.einsum("eq,eqk,eqak->ea", geo.W, div, geo.grad))
        else:
            b = np.zeros(sp_.n_dofs)
        return AssembledSystem(A, b)

    def energy(self, q: np.ndarray, U: np.ndarray | None, geo: Geometry) -> float:
        qq, gq, E = self.pointwise(q, U, geo)
        return self.space.integrate(en.bulk_density(qq, gq, E, self.params), geo)


def assemble_physics_rhs(mesh, q_fields, U_field, mesh_velocity, params, space=None) -> np.ndarray:
    """G_i for the five fields; q_fields given as (5, ndof) or (ndof, 5). Returns (5, ndof)."""
    space = space or P2Space(mesh)
    q = np.asarray(q_fields, dtype=float)
    if q.shape[0] == 5 and q.shape[1] != 5:
        q = q.T
    geo = space.geometry()
    G = PhysicsAssembler(space, params).rhs(q, U_field, geo, mesh_velocity)
    return G.T


def assemble_maxwell(mesh, q_fields, U_field, params, constraints=(), space=None) -> AssembledSystem:
    space = space or P2Space(mesh)
    q = np.asarray(q_fields, dtype=float)
    if q.shape[0] == 5 and q.shape[1] != 5:
        q = q.T
    sys_ = PhysicsAssembler(space, params).maxwell(q, space.geometry())
    return apply_dirichlet(sys_, constraints) if len(constraints) else sys_


def apply_dirichlet(system: AssembledSystem, constraints) -> AssembledSystem:
    """Symmetric elimination of (dof, value) constraints.

    Constrained rows and columns become identity rows/columns; the known
    values are moved to the right-hand side.
    """
    cons = {}
    for dof, val in constraints:
        dof = int(dof)
        if dof in cons and cons[dof] != val:
            raise ValueError(f"conflicting Dirichlet values for dof {dof}")
        cons[dof] = float(val)
    A = system.matrix.tocsr(copy=True)
    b = np.array(system.rhs, dtype=float)
    if not cons:
        return AssembledSystem(A, b, list(system.dirichlet))
    dofs = np.fromiter(cons.keys(), dtype=np.int64)
    vals = np.fromiter(cons.values(), dtype=float)
    n = A.shape[0]
    u = np.zeros(n)
    u[dofs] = vals
    b -= A @ u
    mask = np.zeros(n, dtype=bool)
    mask[dofs] = True
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    A.data[mask[rows] | mask[A.indices]] = 0.0
    diag = rows == A.indices
    have = np.zeros(n, dtype=bool)
    have[rows[diag]] = True
    if have[dofs].all():
        A.data[diag & mask[rows]] = 1.0
    else:
        A = (A + sp.csr_matrix((np.ones(len(dofs)), (dofs, dofs)), shape=A.shape)).tocsr()
        A.sort_indices()
    b[dofs] = vals
    return AssembledSystem(A, b, list(system.dirichlet) + sorted(cons.items()))


def evaluate_at(mesh: TriMesh, u: np.ndarray, points, coords=None, locator=None) -> np.ndarray:
    """Evaluate a P2 field (ndof,) or (ndof, k) at physical points (n, 2)."""
    from .mesh import PointLocator

    loc = locator or PointLocator(mesh, coords)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = mesh.dofmap.elem_dofs
    out = []
    for p in pts:
        e, lam = loc.locate(p)
        out.append(p2_basis(lam) @ u[d[e]])
    return np.array(out)
