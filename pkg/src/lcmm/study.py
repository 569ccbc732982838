"""Convergence studies against a fine reference solution."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import spsolve

from . import fem, io
from . import sim as simmod
from .config import RunConfig
from .mesh import PointLocator, build_structured

COMPONENTS = ("q1", "q2", "q3", "q4", "q5")


@dataclass
class ErrorReport:
    """Max-norm error of each Q component at the coarse-solution nodes.

    ``orientation`` records which solution was interpolated onto which
    node set.
    """
    errors: dict
    n_nodes: int
    orientation: str = "reference interpolated onto coarse P2 nodes"

    @property
    def max(self) -> float:
        return max(self.errors.values())


def linf_error(coarse: io.Snapshot, reference: io.Snapshot) -> ErrorReport:
    """Interpolate the reference (P2, on its own moved mesh) onto every P2 node of ``coarse``."""
    if not np.isclose(coarse.time, reference.time, rtol=1e-9, atol=0.0):
        raise ValueError(f"snapshot times differ: {coarse.time} vs {reference.time}")
    pts = coarse.mesh.dof_coords()
    ref = fem.evaluate_at(reference.mesh, reference.q, pts, locator=PointLocator(reference.mesh))
    err = np.abs(ref - coarse.q).max(0)
    return ErrorReport({k: float(err[i]) for i, k in enumerate(COMPONENTS)}, len(pts))


def fit_slope(n, err) -> tuple[float, float]:
    """Least-squares slope and intercept of log(err) against log(n)."""
    x = np.log(np.asarray(n, dtype=float))
    y = np.log(np.asarray(err, dtype=float))
    if len(x) < 2 or np.ptp(x) == 0.0:
        raise ValueError("degenerate abscissa: need at least two distinct element counts")
    if not np.all(np.isfinite(y)):
        raise ValueError("errors must be positive and finite")
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), float(icpt)


def grid_for(n_elements: int) -> tuple[int, int]:
    """Square criss-cross-free grid whose 2*n*n element count is closest to the request."""
    n = max(1, int(round(np.sqrt(n_elements / 2.0))))
    return n, n


@dataclass
class ConvergenceResult:
    elements: list
    errors: list  # list of dicts per run
    slope: dict
    reference_elements: int
    summaries: list = field(default_factory=list)

    def table(self) -> str:
        lines = ["elements," + ",".join(f"err_{k}" for k in COMPONENTS)]
        for n, e in zip(self.elements, self.errors):
            lines.append(f"{n}," + ",".join("%.10g" % e[k] for k in COMPONENTS))
        lines.append("slope," + ",".join("%.6g" % self.slope[k] for k in COMPONENTS))
        return "\n".join(lines) + "\n"


def final_snapshot(config: RunConfig) -> tuple[io.Snapshot, dict]:
    rep = simmod.run(config.with_(snapshot_interval=0.0), write=False, keep=True)
    if not rep.ok:
        raise RuntimeError(f"run with {config.n_elements} elements failed: {rep.error}")
    return rep.snapshots[-1], rep.summary


def convergence_study(template: RunConfig, element_counts, reference: io.Snapshot | RunConfig,
                      out_dir=None) -> ConvergenceResult:
    """Run ``template`` at each element count and compare with the reference at t_end.

    ``reference`` is either a finished snapshot or a configuration to run.
    """
    if isinstance(reference, RunConfig):
        reference, _ = final_snapshot(reference)
    ref_n = reference.mesh.n_elements
    elems, errs, sums = [], [], []
    for n in element_counts:
        nx, ny = grid_for(n)
        snap, summ = final_snapshot(template.with_(nx=nx, ny=ny))
        rep = linf_error(snap, reference)
        elems.append(snap.mesh.n_elements)
        errs.append(rep.errors)
        sums.append(summ)
    slope = {}
    for k in COMPONENTS:
        e = [d[k] for d in errs]
        slope[k] = fit_slope(elems, e)[0] if min(e) > 0 else float("nan")
    res = ConvergenceResult(elems, errs, slope, ref_n, sums)
    if out_dir is not None:
        io.atomic_write(Path(out_dir) / "convergence.csv", res.table())
    return res


# -- manufactured-solution check of the spatial discretization -------------------

def _mms_exact(x, y):
    return np.sin(np.pi * x) * np.exp(y) + 0.5 * x * x * y


def _mms_source(x, y):
    # -lap(u) + u for the exact solution above
    lap = (1.0 - np.pi**2) * np.sin(np.pi * x) * np.exp(y) + y
    return -lap + _mms_exact(x, y)


def manufactured_error(n: int, jitter: float = 0.2, seed: int = 0) -> float:
    """Max nodal error of P2 for -lap(u) + u = f on a jittered n x n unit-square mesh.

    Interior vertices are displaced randomly by up to ``jitter`` times the
    spacing so that uniform-grid superconvergence does not flatter the rate.
    """
    mesh = build_structured(n, n, (0.0, 1.0, 0.0, 1.0))
    x = mesh.phys_coords.copy()
    rng = np.random.default_rng(seed)
    inner = ~mesh.boundary_vertex
    x[inner] += jitter / n * rng.uniform(-1.0, 1.0, (int(inner.sum()), 2))
    mesh = mesh.with_coords(x)
    space = fem.P2Space(mesh)
    geo = space.geometry(x)
    xq = space.values(mesh.dof_coords())
    K = space.stiffness_local(geo) + space.mass_local(geo)
    A = space.scalar_pattern.build(K)
    load = np.einsum("eq,qa->ea", geo.W * _mms_source(xq[..., 0], xq[..., 1]), space.phi)
    b = space.scatter_vector(load)
    pts = mesh.dof_coords()
    exact = _mms_exact(pts[:, 0], pts[:, 1])
    bd = mesh.boundary_dofs()
    sys_ = fem.apply_dirichlet(fem.AssembledSystem(A, b), list(zip(bd.tolist(), exact[bd].tolist())))
    u = spsolve(sys_.matrix.tocsc(), sys_.rhs)
    return float(np.abs(u - exact).max())


def manufactured_study(resolutions=(4, 8, 16, 32)) -> tuple[list, float]:
    """Errors and the fitted slope against the per-direction resolution n."""
    errs = [manufactured_error(n) for n in resolutions]
    return errs, fit_slope(resolutions, errs)[0]
