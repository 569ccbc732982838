import os
from pathlib import Path

import numpy as np
import pytest

from lcmm import cli, io
from lcmm import qtensor as qt
from lcmm import sim
from lcmm.config import RunConfig, dump_config, load_config
from lcmm.mesh import build_structured

ROOT = Path(__file__).resolve().parents[1]


def small_snapshot(n=2, seed=0):
    m = build_structured(n, n)
    rng = np.random.default_rng(seed)
    nd = m.dofmap.n_dofs
    return io.Snapshot(0.125, m, rng.normal(size=(nd, 5)) * 0.3, rng.normal(size=nd), rng.uniform(1, 2, m.n_vertices))


def quick_defect(tmp_path, **kw):
    base = dict(nx=4, ny=4, t_end=2e-8, out_dir=str(tmp_path), snapshot_interval=1e-8)
    base.update(kw)
    return RunConfig(problem="defect", **base)


# -- snapshots ---------------------------------------------------------------------

def test_vtk_two_quadratic_cells(tmp_path):
    s = small_snapshot(1)
    p = io.write_snapshot(s, tmp_path / "a.vtk")
    d = io.read_vtk(p)
    assert d["cells"].shape == (2, 6) and np.all(d["cell_types"] == 22)
    assert set(d["fields"]) == set(io.FIELDS)
    assert len(d["points"]) == 9


def test_csv_round_trip_bitwise(tmp_path):
    s = small_snapshot(3)
    p = io.write_snapshot(s, tmp_path / "a.csv", "csv")
    d = io.read_csv(p)
    f = s.point_fields()
    for k in io.FIELDS:
        assert np.array_equal(d[k], f[k])
    assert np.array_equal(np.column_stack([d["x"], d["y"]]), s.mesh.dof_coords())


def test_vtk_snapshot_round_trip(tmp_path):
    s = small_snapshot(3)
    p = io.write_snapshot(s, tmp_path / "a.vtk")
    r = io.read_snapshot(p)
    assert r.time == s.time
    assert np.array_equal(r.q, s.q) and np.array_equal(r.U, s.U) and np.array_equal(r.w, s.w)
    assert np.array_equal(r.mesh.phys_coords, s.mesh.phys_coords)
    assert np.array_equal(r.mesh.dofmap.elem_dofs, s.mesh.dofmap.elem_dofs)


def test_derived_fields_recomputed():
    s = small_snapshot(2)
    s.q[:] = qt.uniaxial_from_director([1.0, 0.0, 0.0], 0.4)
    f = s.point_fields()
    assert np.allclose(f["S"], 0.4) and np.allclose(f["beta"], 0.0, atol=1e-7)


def test_atomic_write(tmp_path):
    p = io.atomic_write(tmp_path / "sub" / "x.txt", "hello\n")
    assert p.read_text() == "hello\n"
    assert os.listdir(tmp_path / "sub") == ["x.txt"]
    (tmp_path / "dir").mkdir()
    with pytest.raises(OSError, match="dir"):
        io.atomic_write(tmp_path / "dir", "x")
    assert os.listdir(tmp_path / "sub") == ["x.txt"]
    with pytest.raises(ValueError):
        io.write_snapshot(small_snapshot(1), tmp_path / "a.xyz", "xyz")


def test_summary_round_trip(tmp_path):
    vals = {"status": "ok", "energy": -1.0 / 3.0, "steps": 7}
    p = io.write_summary(tmp_path / "s.txt", vals)
    r = io.read_summary(p)
    assert r["status"] == "ok" and float(r["energy"]) == -1.0 / 3.0 and int(r["steps"]) == 7


def test_axis_eigenvalues_follow_axes():
    M = np.zeros((3, 3))
    ax = list(qt.PLANE_AXES) + [3 - sum(qt.PLANE_AXES)]
    M[ax[0], ax[0]], M[ax[1], ax[1]], M[ax[2], ax[2]] = 0.1, 0.3, -0.4
    lam = io.axis_eigenvalues(qt.from_matrix(M))
    assert np.allclose(lam, [[0.1, 0.3, -0.4]])
    M[ax[0], ax[0]], M[ax[1], ax[1]] = 0.3, 0.1
    assert np.allclose(io.axis_eigenvalues(qt.from_matrix(M)), [[0.3, 0.1, -0.4]])


def test_profile_uniform_constant(tmp_path):
    m = build_structured(4, 4, (-1, 1, -1, 1))
    q = np.tile(qt.uniaxial_from_director([0.0, 0.0, 1.0], 0.65), (m.dofmap.n_dofs, 1))
    s = io.Snapshot(0.0, m, q, None)
    t = io.profile_line(s, 0.3, 31, path=tmp_path / "p.csv")
    assert np.allclose(t["S"], 0.65, atol=1e-12)
    assert np.ptp(t["lambda1"]) < 1e-12 and np.ptp(t["lambda3"]) < 1e-12
    assert (tmp_path / "p.csv").exists()
    with pytest.raises(ValueError):
        io.profile_line(s, 5.0)


# -- config -------------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    c = RunConfig(problem="picell", nx=12, ny=6, tol=5e-4, frozen_mesh=True)
    p = tmp_path / "c.ini"
    p.write_text(dump_config(c))
    assert load_config(p) == c


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")
    p = tmp_path / "bad.ini"
    p.write_text("[mesh]\nnx = 4\nbogus = 1\n")
    with pytest.raises(ValueError):
        load_config(p)
    with pytest.raises(ValueError):
        RunConfig(monitor_kind="XYZ")
    with pytest.raises(ValueError):
        RunConfig(dt_min=1.0, dt_max=0.5)


@pytest.mark.parametrize("name", ["defect.ini", "converge.ini", "picell.ini"])
def test_shipped_configs_load(name):
    load_config(ROOT / "configs" / name)


# -- run ---------------------------------------------------------------------------

def test_run_summary_and_files(tmp_path):
    rep = sim.run(quick_defect(tmp_path))
    assert rep.ok
    s = io.read_summary(tmp_path / "summary.txt")
    assert int(s["accepted_steps"]) + int(s["rejected_steps"]) == int(s["attempted_steps"])
    assert s["status"] == "ok" and float(s["t_final_s"]) == pytest.approx(2e-8)
    snaps = sorted(tmp_path.glob("snapshot_*.vtk"))
    assert len(snaps) == 3
    back = io.read_snapshot(snaps[-1])
    assert np.array_equal(back.q, rep.snapshots[-1].q)
    assert back.time == pytest.approx(2e-8, rel=1e-12)


def test_run_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    sim.run(quick_defect(a))
    sim.run(quick_defect(b))
    fa = sorted(a.glob("snapshot_*"))
    assert fa
    for f in fa:
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_equilibrium_picell_fixed_point(tmp_path):
    dt = 1e-9
    c = RunConfig(problem="picell", nx=8, ny=4, pretilt_deg=0.0, perturb=False, zero_field=True,
                  dt0=dt, dt_max=dt, t_end=10 * dt, out_dir=str(tmp_path))
    rep = sim.run(c, write=False)
    assert rep.ok and rep.summary["accepted_steps"] == 10
    first, last = rep.snapshots[0], rep.snapshots[-1]
    assert np.abs(last.q - first.q).max() <= 1e-9
    assert np.abs(last.mesh.phys_coords - first.mesh.phys_coords).max() <= 1e-9


def test_picell_writes_defect_report(tmp_path):
    c = RunConfig(problem="picell", nx=6, ny=3, t_end=2e-9, dt0=1e-9, out_dir=str(tmp_path))
    rep = sim.run(c)
    assert rep.ok
    lines = (tmp_path / "defects.csv").read_text().splitlines()
    assert lines[0].startswith("time_s,count") and len(lines) == 3


def test_run_failure_reports(tmp_path):
    c = quick_defect(tmp_path, tol=1e-300, dt_min=1e-10, dt0=1e-9)
    rep = sim.run(c)
    assert not rep.ok and "StepSizeUnderflow" in rep.error
    assert io.read_summary(tmp_path / "summary.txt")["status"] == "failed"


# -- CLI ---------------------------------------------------------------------------

def test_cli_run_and_profile(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(dump_config(quick_defect(tmp_path / "out")))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "status=ok" in capsys.readouterr().out
    snap = sorted((tmp_path / "out").glob("snapshot_*.vtk"))[-1]
    assert cli.main(["profile", "--snapshot", str(snap), "--out", str(tmp_path / "p"), "--samples", "11"]) == 0
    d = io.read_csv(tmp_path / "p" / "profile.csv")
    assert len(d["x"]) == 11


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "none.ini")]) == 2
    assert "not found" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["converge", "--elements", "a,b"])
    with pytest.raises(SystemExit):
        cli.main(["bogus"])


def test_cli_print_config(capsys):
    assert cli.main(["run", "--elements", "200", "--monitor", "AL", "--print-config"]) == 0
    out = capsys.readouterr().out
    assert "nx = 10" in out and "monitor_kind = AL" in out
