import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from lcmm import energy as en
from lcmm import fem
from lcmm import qtensor as qt
from lcmm.mesh import TriMesh, build_structured

P = en.FIVE_CB.nondimensional()


# -- independent oracles -----------------------------------------------------

def duffy_rule(verts, n=8):
    """Collapsed-coordinate Gauss rule on a physical triangle; exact far beyond degree 8."""
    g, w = np.polynomial.legendre.leggauss(n)
    g, w = 0.5 * (g + 1), 0.5 * w
    U, V = np.meshgrid(g, g, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    r, s = U.ravel(), (V * (1 - U)).ravel()
    wt = (WU * WV * (1 - U)).ravel()
    v = np.asarray(verts, dtype=float)
    T = np.column_stack([v[1] - v[0], v[2] - v[0]])
    pts = v[0] + np.column_stack([r, s]) @ T.T
    return pts, wt * abs(np.linalg.det(T))


def monomial_basis(nodes):
    """P2 nodal basis via a Vandermonde inverse; returns callables for values and gradients."""
    V = lambda x: np.column_stack([np.ones(len(x)), x[:, 0], x[:, 1], x[:, 0] ** 2, x[:, 0] * x[:, 1], x[:, 1] ** 2])
    C = np.linalg.inv(V(nodes))
    def vals(x):
        return V(x) @ C
    def grads(x):
        dx = np.column_stack([0 * x[:, 0], np.ones(len(x)), 0 * x[:, 0], 2 * x[:, 0], x[:, 1], 0 * x[:, 0]])
        dy = np.column_stack([0 * x[:, 0], 0 * x[:, 0], np.ones(len(x)), 0 * x[:, 0], x[:, 0], 2 * x[:, 1]])
        return dx @ C, dy @ C
    return vals, grads


def element_nodes(mesh, e):
    d = mesh.dof_coords()
    return d[mesh.dofmap.elem_dofs[e]]


def raw_params(**kw):
    """MaterialParams bypassing validation (e.g. pure elastic energy)."""
    p = object.__new__(en.MaterialParams)
    base = dataclasses.asdict(P)
    base.update(kw)
    for k, v in base.items():
        object.__setattr__(p, k, v)
    return p


# -- tests -------------------------------------------------------------------

def test_quadrature_exactness():
    # integrals of l1^a l2^b over the reference triangle: a! b! / (a + b + 2)!
    from math import factorial

    r = fem.QUAD7
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-15)
    for a in range(6):
        for b in range(6 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            val = (r.weights * r.points[:, 1] ** a * r.points[:, 2] ** b).sum()
            assert val == pytest.approx(exact, abs=1e-15)


def test_basis_is_nodal():
    nodes = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])
    assert np.allclose(fem.p2_basis(nodes), np.eye(6), atol=1e-15)


def test_mass_single_triangle_oracle():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = TriMesh(x, x, np.array([[0, 1, 2]]))
    M = fem.assemble_mass(mesh).toarray()
    d = mesh.dofmap.elem_dofs[0]
    vals, _ = monomial_basis(element_nodes(mesh, 0))
    pts, w = duffy_rule(x)
    phi = vals(pts)
    oracle = np.einsum("q,qa,qb->ab", w, phi, phi)
    assert np.abs(M[np.ix_(d, d)] - oracle).max() < 1e-14


def test_mass_partition_of_unity_and_scaling():
    mesh = build_structured(4, 3, (0, 2, 0, 1))
    M = fem.assemble_mass(mesh)
    assert M.sum() == pytest.approx(2.0, rel=1e-13)
    assert abs(M - M.T).max() < 1e-16
    M2 = fem.assemble_mass(mesh, coords=2.0 * mesh.phys_coords)
    assert np.allclose(M2.toarray(), 4.0 * M.toarray(), rtol=1e-13, atol=1e-16)


def test_rhs_zero_state_is_exactly_zero():
    mesh = build_structured(3, 3)
    space = fem.P2Space(mesh)
    G = fem.assemble_physics_rhs(mesh, np.zeros((space.n_dofs, 5)), None, np.zeros((mesh.n_vertices, 2)), P)
    assert np.all(G == 0.0)


def test_rhs_equilibrium_state_vanishes():
    mesh = build_structured(4, 4)
    n = np.array([0.3, 0.5, 0.7])
    q = np.tile(qt.uniaxial_from_director(n / np.linalg.norm(n), P.S_eq), (fem.P2Space(mesh).n_dofs, 1))
    G = fem.assemble_physics_rhs(mesh, q, None, None, P)
    inner = np.setdiff1d(np.arange(q.shape[0]), mesh.boundary_dofs())
    assert np.abs(G[:, inner]).max() < 1e-10


def test_rhs_elastic_matches_dense_laplacian():
    # q1 = x, only elastic energy: G_1 = -K q1 and G_4 = 0 with the dissipation mixing
    x = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [1.2, 1.0]])
    mesh = TriMesh(x, x, np.array([[0, 1, 2], [1, 3, 2]]))
    p = raw_params(A=0.0, B=0.0, C=0.0, L=1.3, nu=0.7)
    d = mesh.dof_coords()
    q = np.zeros((len(d), 5))
    q[:, 0] = d[:, 0]
    G = fem.assemble_physics_rhs(mesh, q, None, None, p)
    K = np.zeros((len(d), len(d)))
    for e in range(2):
        dofs = mesh.dofmap.elem_dofs[e]
        _, grads = monomial_basis(element_nodes(mesh, e))
        pts, w = duffy_rule(x[mesh.elements[e]])
        gx, gy = grads(pts)
        K[np.ix_(dofs, dofs)] += np.einsum("q,qa,qb->ab", w, gx, gx) + np.einsum("q,qa,qb->ab", w, gy, gy)
    assert np.abs(G[0] - (-(p.L / p.nu) * K @ q[:, 0])).max() < 1e-12
    assert np.abs(G[3]).max() < 1e-12
    assert np.all(G[[1, 2, 4]] == 0.0)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    mesh = build_structured(2, 2)
    x = mesh.phys_coords.copy()
    x[4] += [0.05, -0.03]
    mesh = mesh.with_coords(x)
    space = fem.P2Space(mesh)
    asm = fem.PhysicsAssembler(space, P)
    geo = space.geometry()
    q = rng.normal(scale=0.4, size=(space.n_dofs, 5))
    vel = rng.normal(size=(mesh.n_vertices, 2))
    J = space.block_pattern.build(asm.jacobian_values(q, geo, 0.0, -1.0, vel)).toarray()  # = dG/dq
    h = 1e-6
    for k in rng.choice(5 * space.n_dofs, 15, replace=False):
        dq = np.zeros(q.size)
        dq[k] = h
        dq = dq.reshape(q.shape)
        col = (asm.rhs(q + dq, None, geo, vel) - asm.rhs(q - dq, None, geo, vel)).ravel() / (2 * h)
        assert np.abs(col - J[:, k]).max() < 1e-6 * max(1.0, np.abs(col).max())


def test_motion_term_is_ale_transport():
    # for q = x and xdot = (1, 0): int div(xdot q) v = int v
    mesh = build_structured(3, 2)
    space = fem.P2Space(mesh)
    geo = space.geometry()
    vel = np.tile([1.0, 0.0], (mesh.n_vertices, 1))
    d = mesh.dof_coords()
    N = space.scalar_pattern.build(space.motion_local(geo, vel))
    ones = space.scatter_vector(np.einsum("eq,qa->ea", geo.W, space.phi))
    assert np.allclose(N @ d[:, 0], ones, atol=1e-14)


def test_maxwell_capacitor_ramp():
    mesh = build_structured(4, 3, (0, 1, 0, 2))
    space = fem.P2Space(mesh)
    d = mesh.dof_coords()
    bottom, top = mesh.segment_dofs("bottom"), mesh.segment_dofs("top")
    cons = [(k, 0.0) for k in bottom] + [(k, 5.0) for k in top]
    s = fem.assemble_maxwell(mesh, np.zeros((space.n_dofs, 5)), None, P, cons)
    U = sp.linalg.spsolve(s.matrix.tocsc(), s.rhs)
    assert np.abs(U - 2.5 * d[:, 1]).max() < 1e-10
    cons0 = [(k, 0.0) for k in bottom] + [(k, 0.0) for k in top]
    s = fem.assemble_maxwell(mesh, np.zeros((space.n_dofs, 5)), None, P, cons0)
    assert np.all(sp.linalg.spsolve(s.matrix.tocsc(), s.rhs) == 0.0)


def test_maxwell_tilted_q_dense_oracle():
    from lcmm import linalg

    mesh = build_structured(4, 4)
    space = fem.P2Space(mesh)
    n = qt.plane_to_tensor([np.cos(np.pi / 4), np.sin(np.pi / 4), 0.0])
    q = np.tile(qt.uniaxial_from_director(n, P.S_eq), (space.n_dofs, 1))
    cons = [(k, 0.0) for k in mesh.segment_dofs("bottom")] + [(k, 1.0) for k in mesh.segment_dofs("top")]
    s = fem.assemble_maxwell(mesh, q, None, P, cons)
    dense = np.linalg.solve(s.matrix.toarray(), s.rhs)
    it = linalg.solve(s.matrix, s.rhs, tol=1e-12)
    assert np.abs(it.x - dense).max() < 1e-9
    # anisotropy bends the potential away from the isotropic ramp
    assert np.abs(dense - mesh.dof_coords()[:, 1]).max() > 1e-3


def test_apply_dirichlet_cases():
    rng = np.random.default_rng(5)
    B = rng.normal(size=(8, 8))
    A = sp.csr_matrix(B @ B.T + 8 * np.eye(8))
    b = rng.normal(size=8)
    s = fem.apply_dirichlet(fem.AssembledSystem(A, b), [])
    assert np.array_equal(s.matrix.toarray(), A.toarray()) and np.array_equal(s.rhs, b)
    vals = rng.normal(size=8)
    s = fem.apply_dirichlet(fem.AssembledSystem(A, b), list(enumerate(vals)))
    assert np.array_equal(s.matrix.toarray(), np.eye(8)) and np.allclose(s.rhs, vals)
    with pytest.raises(ValueError):
        fem.apply_dirichlet(fem.AssembledSystem(A, b), [(1, 0.0), (1, 2.0)])


def test_apply_dirichlet_reduced_oracle():
    rng = np.random.default_rng(6)
    n = 30
    B = sp.random(n, n, density=0.2, random_state=7)
    A = sp.csr_matrix(B @ B.T + n * sp.eye(n))
    b = rng.normal(size=n)
    fixed = np.sort(rng.choice(n, 9, replace=False))
    vals = rng.normal(size=9)
    s = fem.apply_dirichlet(fem.AssembledSystem(A, b), list(zip(fixed, vals)))
    x = np.linalg.solve(s.matrix.toarray(), s.rhs)
    free = np.setdiff1d(np.arange(n), fixed)
    Ad = A.toarray()
    xr = np.linalg.solve(Ad[np.ix_(free, free)], b[free] - Ad[np.ix_(free, fixed)] @ vals)
    assert np.allclose(x[fixed], vals) and np.allclose(x[free], xr, atol=1e-12)
    Ms = s.matrix.toarray()
    assert np.allclose(Ms, Ms.T)


def test_evaluate_at_reproduces_quadratics():
    mesh = build_structured(3, 3)
    d = mesh.dof_coords()
    f = lambda x: 1 + 2 * x[:, 0] - x[:, 1] + 3 * x[:, 0] * x[:, 1] - x[:, 1] ** 2
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 1, (50, 2))
    assert np.abs(fem.evaluate_at(mesh, f(d), pts) - f(pts)).max() < 1e-13


def test_tangled_geometry_raises():
    from lcmm.mesh import TangledMeshError

    mesh = build_structured(2, 2)
    x = mesh.phys_coords.copy()
    x[4] = [2.0, 2.0]
    with pytest.raises(TangledMeshError):
        fem.P2Space(mesh).geometry(x)
