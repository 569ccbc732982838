"""Snapshot output: legacy VTK (quadratic triangles), CSV, run summaries.

Every file is written to a temporary sibling and renamed into place, so a
reader sees either the complete file or nothing.
"""
from __future__ import annotations

import csv
import itertools
import io as _io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from . import qtensor as qt
from .mesh import PointLocator, TriMesh

FIELDS = ("q1", "q2", "q3", "q4", "q5", "U", "S", "beta", "w")
VTK_QUADRATIC_TRIANGLE = 22


@dataclass
class Snapshot:
    time: float
    mesh: TriMesh
    q: np.ndarray
    U: np.ndarray
    w: np.ndarray | None = None  # vertex monitor values
    dt_history: list = field(default_factory=list)
    energy: float = float("nan")

    def point_fields(self) -> dict:
        """Fields at every P2 node; S and beta are recomputed from q here."""
        n = self.q.shape[0]
        out = {f"q{i + 1}": self.q[:, i] for i in range(5)}
        out["U"] = self.U if self.U is not None else np.zeros(n)
        out["S"] = qt.order_parameter(self.q)
        out["beta"] = qt.biaxiality_field(self.q)
        w = np.ones(self.mesh.n_vertices) if self.w is None else np.asarray(self.w)
        e = self.mesh.edges
        out["w"] = np.concatenate([w, 0.5 * (w[e[:, 0]] + w[e[:, 1]])])
        return out


def _fmt(v) -> str:
    return "%.17g" % v


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(f"failed to write {path}: {exc}") from exc
    return path


def vtk_text(snap: Snapshot, title: str = "lcmm snapshot") -> str:
    mesh = snap.mesh
    pts = mesh.dof_coords()
    d = mesh.dofmap.elem_dofs
    buf = _io.StringIO()
    buf.write("# vtk DataFile Version 3.0\n")
    buf.write(f"{title} t={_fmt(snap.time)}\n")
    buf.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {len(pts)} double\n")
    for p in pts:
        buf.write(f"{_fmt(p[0])} {_fmt(p[1])} 0\n")
    buf.write(f"CELLS {len(d)} {7 * len(d)}\n")
    for row in d:
        buf.write("6 " + " ".join(str(int(v)) for v in row) + "\n")
    buf.write(f"CELL_TYPES {len(d)}\n")
    buf.write(f"{VTK_QUADRATIC_TRIANGLE}\n" * len(d))
    buf.write(f"POINT_DATA {len(pts)}\n")
    for name, vals in snap.point_fields().items():
        buf.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        buf.write("\n".join(_fmt(v) for v in vals))
        buf.write("\n")
    return buf.getvalue()


def csv_text(snap: Snapshot) -> str:
    pts = snap.mesh.dof_coords()
    f = snap.point_fields()
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("node", "x", "y") + FIELDS)
    for i in range(len(pts)):
        w.writerow([i, _fmt(pts[i, 0]), _fmt(pts[i, 1])] + [_fmt(f[k][i]) for k in FIELDS])
    return buf.getvalue()


def write_snapshot(snap: Snapshot, path, fmt: str = "vtk") -> Path:
    if fmt == "vtk":
        return atomic_write(path, vtk_text(snap))
    if fmt == "csv":
        return atomic_write(path, csv_text(snap))
    raise ValueError(f"unknown snapshot format {fmt!r}")


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return {k: data[:, i] for i, k in enumerate(header)}


def read_vtk(path) -> dict:
    """Minimal reader for files produced by :func:`vtk_text`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    out: dict = {"fields": {}}
    i = 0
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "POINTS":
            n = int(tok[1])
            out["points"] = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif tok[0] == "CELLS":
            n = int(tok[1])
            out["cells"] = np.array([[int(v) for v in lines[i + 1 + k].split()[1:]] for k in range(n)])
            i += n + 1
        elif tok[0] == "CELL_TYPES":
            n = int(tok[1])
            out["cell_types"] = np.array([int(lines[i + 1 + k]) for k in range(n)])
            i += n + 1
        elif tok[0] == "SCALARS":
            n = len(out["points"])
            out["fields"][tok[1]] = np.array([float(lines[i + 2 + k]) for k in range(n)])
            i += n + 2
        else:
            i += 1
    return out


def read_snapshot(path) -> Snapshot:
    """Rebuild a Snapshot from a VTK file written by :func:`vtk_text`.

    The reference coordinates are not stored, so the physical ones stand in
    for them. Vertex and edge numbering is recovered exactly because edges
    are numbered deterministically from the connectivity.
    """
    data = read_vtk(path)
    cells = data["cells"]
    if cells.ndim != 2 or cells.shape[1] != 6:
        raise ValueError(f"{path}: expected quadratic triangles")
    nv = int(cells[:, :3].max()) + 1
    x = data["points"][:nv, :2]
    mesh = TriMesh(x, x, cells[:, :3])
    if not np.array_equal(mesh.dofmap.elem_dofs, cells):
        raise ValueError(f"{path}: edge numbering does not match the connectivity")
    f = data["fields"]
    q = np.column_stack([f[f"q{i + 1}"] for i in range(5)])
    with open(path) as fh:
        fh.readline()
        title = fh.readline()
    t = float(title.rsplit("t=", 1)[1]) if "t=" in title else float("nan")
    return Snapshot(t, mesh, q, f.get("U"), f["w"][:nv] if "w" in f else None)


def write_summary(path, values: dict) -> Path:
    lines = []
    for k, v in values.items():
        if isinstance(v, float):
            v = _fmt(v)
        lines.append(f"{k}={v}")
    return atomic_write(path, "\n".join(lines) + "\n")


def read_summary(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def axis_eigenvalues(q) -> np.ndarray:
    """Eigenvalues attached to the eigenvectors closest to the plane x, plane y and normal axes.

    Unlike the sorted eigenvalues these can cross, which exposes eigenvalue
    exchange along a line.
    """
    mats = qt.to_matrix(np.atleast_2d(q))
    vals, vecs = np.linalg.eigh(mats)
    axes = (qt.PLANE_AXES[0], qt.PLANE_AXES[1], 3 - sum(qt.PLANE_AXES))
    w = vecs[:, list(axes), :] ** 2  # w[n, axis, eig]
    perms = np.array(list(itertools.permutations(range(3))))
    score = w[:, [0, 1, 2], perms].sum(-1)  # (n, 6)
    best = perms[np.argmax(score, axis=1)]
    return np.take_along_axis(vals, best, axis=1)


def profile_line(snap: Snapshot, c: float = 0.0, samples: int = 201, path=None, x_range=None):
    """Sample S, beta and the Q eigenvalues along the horizontal line y = c.

    Both the sorted eigenvalues and the axis-attached ones of
    :func:`axis_eigenvalues` are reported.

    Returns a dict of arrays; if ``path`` is given the table is also written
    as CSV.
    """
    mesh = snap.mesh
    x = mesh.phys_coords
    lo, hi = (x[:, 0].min(), x[:, 0].max()) if x_range is None else x_range
    if not (x[:, 1].min() <= c <= x[:, 1].max()):
        raise ValueError("line does not intersect the domain")
    xs = np.linspace(lo, hi, samples)
    pts = np.column_stack([xs, np.full(samples, c)])
    qv = fem.evaluate_at(mesh, snap.q, pts, locator=PointLocator(mesh))
    lam = qt.eigenvalues(qv)
    ax = axis_eigenvalues(qv)
    table = {
        "x": xs,
        "y": pts[:, 1],
        "S": qt.order_parameter(qv),
        "beta": qt.biaxiality_field(qv),
        "lambda1": lam[:, 0],
        "lambda2": lam[:, 1],
        "lambda3": lam[:, 2],
        "lambda_x": ax[:, 0],
        "lambda_y": ax[:, 1],
        "lambda_z": ax[:, 2],
    }
    if path is not None:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = list(table)
        w.writerow(keys)
        for i in range(samples):
            w.writerow([_fmt(table[k][i]) for k in keys])
        atomic_write(path, buf.getvalue())
    return table
