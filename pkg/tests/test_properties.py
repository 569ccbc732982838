"""Module-level invariants that cut across single operations."""
import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import special_ortho_group

from lcmm import energy as en
from lcmm import fem, linalg, study
from lcmm import mmpde as mm
from lcmm import problems as pr
from lcmm import qtensor as qt
from lcmm import timestep as ts
from lcmm.io import Snapshot
from lcmm.mesh import build_structured

P = en.FIVE_CB.nondimensional()


def dense(q):
    return qt.to_matrix(q)


# -- qtensor -------------------------------------------------------------------------

def test_invariants_1000_random_tensors():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(1000, 5))
    Q = dense(q)
    assert np.abs(qt.trace_q2(q) - np.einsum("nij,nji->n", Q, Q)).max() < 1e-12
    assert np.abs(qt.trace_q3(q) - np.einsum("nij,njk,nki->n", Q, Q, Q)).max() < 1e-12
    assert np.abs(qt.eigenvalues(q).sum(1)).max() < 1e-12


def test_uniaxial_biaxiality_zero_over_range():
    rng = np.random.default_rng(1)
    n = rng.normal(size=(200, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    S = rng.uniform(0.1, 1.0, 200)
    q = qt.uniaxial_from_director(n, S)
    assert qt.biaxiality_field(q).max() <= 1e-10


# -- energy --------------------------------------------------------------------------

def test_thermotropic_frame_indifference():
    rng = np.random.default_rng(2)
    for seed in range(20):
        q = rng.normal(scale=0.5, size=5)
        R = special_ortho_group.rvs(3, random_state=seed)
        qr = qt.from_matrix(R @ dense(q) @ R.T)
        assert en.thermotropic_density(qr, P) == pytest.approx(en.thermotropic_density(q, P), abs=1e-10)


def test_uniform_equilibrium_stationary():
    q = qt.uniaxial_from_director([0.6, 0.0, 0.8], P.S_eq)
    f, G = en.scaled_rhs(*en.bulk_derivatives(q, np.zeros((5, 2)), np.zeros(2), P), P.nu)
    assert np.abs(f).max() < 1e-10 and np.abs(G).max() < 1e-10


def test_displacement_linear_in_E():
    rng = np.random.default_rng(3)
    p = P.with_(e_flexo=0.4)
    q, g = rng.normal(size=5), rng.normal(size=(5, 2))
    E1, E2 = rng.normal(size=2), rng.normal(size=2)
    D = lambda E: en.displacement(q, g, E, p)
    D0 = D(np.zeros(2))
    lhs = D(2.0 * E1 - 3.0 * E2) - D0
    rhs = 2.0 * (D(E1) - D0) - 3.0 * (D(E2) - D0)
    assert np.abs(lhs - rhs).max() < 1e-12


# -- mesh through a simulation --------------------------------------------------------

def test_area_and_connectivity_preserved_over_moving_run():
    m = pr.defect_mesh(8)
    setup = pr.defect_initial_and_boundary(m, pr.DefectConfig(), P)
    model = ts.PhysicsModel(m, P, setup.q_dofs, setup.q_values, q_bc=setup.q_bc)
    st = ts.initial_state(model, m, setup.q0, 1.0)
    elems, edges, dofs = m.elements.copy(), m.edges.copy(), m.dofmap.elem_dofs.copy()
    moved = 0.0
    for _ in range(5):
        st = ts.advance(model, st, ts.IntegratorOptions())
        mesh = st.mesh
        assert mesh.areas().sum() == pytest.approx(400.0, abs=1e-12 * 400)
        assert np.array_equal(mesh.elements, elems) and np.array_equal(mesh.edges, edges)
        assert np.array_equal(mesh.dofmap.elem_dofs, dofs)
        d = mesh.dof_coords()
        e = mesh.edges
        assert np.array_equal(d[mesh.n_vertices:], 0.5 * (mesh.phys_coords[e[:, 0]] + mesh.phys_coords[e[:, 1]]))
        moved = max(moved, np.abs(mesh.phys_coords - m.phys_coords).max())
    assert moved > 1e-6  # the mesh did move


# -- fem -------------------------------------------------------------------------------

def test_mass_symmetric_positive_definite():
    rng = np.random.default_rng(4)
    m = build_structured(10, 10)
    x = m.phys_coords.copy()
    inner = ~m.boundary_vertex
    x[inner] += rng.uniform(-0.03, 0.03, (inner.sum(), 2))
    M = fem.assemble_mass(m, coords=x).toarray()
    assert np.abs(M - M.T).max() < 1e-14
    np.linalg.cholesky(M)


def test_maxwell_zero_q_symmetric():
    m = build_structured(6, 6)
    space = fem.P2Space(m)
    A = fem.PhysicsAssembler(space, P).maxwell(np.zeros((space.n_dofs, 5)), space.geometry()).matrix
    assert abs(A - A.T).max() < 1e-14


def test_zero_velocity_motion_contributes_nothing():
    m = build_structured(4, 4)
    space = fem.P2Space(m)
    geo = space.geometry()
    rng = np.random.default_rng(5)
    q = rng.normal(scale=0.3, size=(space.n_dofs, 5))
    asm = fem.PhysicsAssembler(space, P)
    G0 = asm.rhs(q, None, geo)
    G1 = asm.rhs(q, None, geo, np.zeros((m.n_vertices, 2)))
    assert np.array_equal(G0, G1)
    assert np.all(asm.motion_term_local(q, geo, np.zeros((m.n_vertices, 2))) == 0.0)


# -- mmpde -------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", mm.MONITOR_KINDS)
def test_monitor_floor(kind):
    m = pr.defect_mesh(10)
    setup = pr.defect_initial_and_boundary(m, pr.DefectConfig(), P)
    rng = np.random.default_rng(6)
    for q in (setup.q0, setup.q0 + rng.normal(scale=0.2, size=setup.q0.shape)):
        mon = mm.build_monitor(q, m, mm.MmpdeParams(monitor_kind=kind), np.full(m.n_vertices, 1.5))
        assert mon.w.min() >= 1.0 - 1e-12 and np.isfinite(mon.w).all()


def test_smooth_spatial_conserves_integral():
    rng = np.random.default_rng(7)
    m = build_structured(9, 7, (0, 3, 0, 1))
    r = m.ref_coords
    e = m.elements
    a = 0.5 * np.abs((r[e[:, 1], 0] - r[e[:, 0], 0]) * (r[e[:, 2], 1] - r[e[:, 0], 1])
                     - (r[e[:, 2], 0] - r[e[:, 0], 0]) * (r[e[:, 1], 1] - r[e[:, 0], 1]))
    integral = lambda w: float((a * w[e].mean(1)).sum())
    w = rng.uniform(1, 5, m.n_vertices)
    for _ in range(3):
        w2 = mm.smooth_spatial(w, m, 1)
        assert abs(integral(w2) - integral(w)) < 1e-10 * integral(w)
        w = w2


# -- linear algebra ------------------------------------------------------------------------

def test_ilu_reduces_iterations_on_maxwell():
    m = build_structured(16, 16)
    space = fem.P2Space(m)
    q = np.tile(pr.inplane_q(0.4, P.S_eq), (space.n_dofs, 1))
    sys_ = fem.PhysicsAssembler(space, P).maxwell(q, space.geometry())
    bottom, top = m.segment_dofs("bottom"), m.segment_dofs("top")
    cons = [(d, 0.0) for d in np.unique(bottom)] + [(d, 1.0) for d in np.unique(top)]
    sys_ = fem.apply_dirichlet(sys_, cons)
    A = sp.csr_matrix(sys_.matrix)
    plain = linalg.bicgstab(A, sys_.rhs, None, tol=1e-10, maxit=5000)
    pre = linalg.bicgstab(A, sys_.rhs, linalg.ilu0(A), tol=1e-10)
    assert pre.converged and plain.converged
    assert pre.iterations < plain.iterations


def test_spmv_linear():
    rng = np.random.default_rng(9)
    A = sp.random(60, 60, density=0.1, random_state=9, format="csr")
    x, y = rng.normal(size=60), rng.normal(size=60)
    lhs = linalg.spmv(A, 1.5 * x - 0.25 * y)
    rhs = 1.5 * linalg.spmv(A, x) - 0.25 * linalg.spmv(A, y)
    assert np.abs(lhs - rhs).max() < 1e-13


# -- study ---------------------------------------------------------------------------------

def test_linf_orientation_recorded():
    m = build_structured(3, 3)
    s = Snapshot(0.0, m, np.zeros((m.dofmap.n_dofs, 5)), None)
    rep = study.linf_error(s, s)
    assert rep.orientation == "reference interpolated onto coarse P2 nodes"
