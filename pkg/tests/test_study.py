import numpy as np
import pytest

from lcmm import io, study
from lcmm.mesh import build_structured


def snap_from(mesh, fn, t=1.0):
    x = mesh.dof_coords()
    q = np.column_stack([fn(x[:, 0], x[:, 1]) * (k + 1) for k in range(5)])
    return io.Snapshot(t, mesh, q, None)


def test_linf_error_self_is_zero():
    m = build_structured(5, 5, (-1, 1, -1, 1))
    s = snap_from(m, lambda x, y: np.sin(3 * x) * y)
    rep = study.linf_error(s, s)
    assert rep.max < 1e-14 and rep.n_nodes == m.dofmap.n_dofs


def test_linf_error_linear_reproduced():
    rng = np.random.default_rng(0)
    fine = build_structured(9, 7, (-1, 1, -1, 1))
    x = fine.phys_coords.copy()
    inner = ~fine.boundary_vertex
    x[inner] += rng.uniform(-0.05, 0.05, (inner.sum(), 2))
    fine = fine.with_coords(x)
    coarse = build_structured(4, 3, (-1, 1, -1, 1))
    lin = lambda x, y: 0.3 + 2 * x - y
    assert study.linf_error(snap_from(coarse, lin), snap_from(fine, lin)).max <= 1e-12


def test_linf_error_detects_difference_and_time_mismatch():
    m = build_structured(4, 4)
    a = snap_from(m, lambda x, y: x)
    b = snap_from(m, lambda x, y: x + 0.01)
    assert study.linf_error(a, b).errors["q1"] == pytest.approx(0.01, rel=1e-10)
    with pytest.raises(ValueError):
        study.linf_error(a, snap_from(m, lambda x, y: x, t=2.0))


def test_fit_slope():
    n = np.array([10.0, 20.0, 40.0])
    s, c = study.fit_slope(n, 5.0 * n**-3)
    assert s == pytest.approx(-3.0) and np.exp(c) == pytest.approx(5.0)
    with pytest.raises(ValueError, match="degenerate"):
        study.fit_slope([100, 100], [1e-2, 2e-2])
    with pytest.raises(ValueError):
        study.fit_slope([100], [1e-2])


def test_grid_for():
    assert study.grid_for(200) == (10, 10)
    assert study.grid_for(2048) == (32, 32)
    assert study.grid_for(1) == (1, 1)


def test_manufactured_slope():
    errs, slope = study.manufactured_study((4, 8, 16, 32))
    assert np.all(np.diff(errs) < 0)
    assert -3.5 <= slope <= -2.5


def test_convergence_table_format():
    r = study.ConvergenceResult([10, 20], [{k: 1e-2 for k in study.COMPONENTS}, {k: 1e-3 for k in study.COMPONENTS}],
                                {k: -3.3 for k in study.COMPONENTS}, 100)
    lines = r.table().splitlines()
    assert lines[0].startswith("elements,err_q1") and lines[-1].startswith("slope,-3.3")
