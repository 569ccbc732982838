"""Unstructured triangulation with fixed computational and moving physical coordinates.

Geometry is piecewise linear (straight edges); solution spaces are quadratic.
Edge-midpoint degrees of freedom are derived from vertex positions and never
stored independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SEGMENTS = ("bottom", "right", "top", "left")

# local edges in the VTK quadratic-triangle order
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


class TangledMeshError(RuntimeError):
    def __init__(self, elements, message: str | None = None):
        self.elements = np.atleast_1d(np.asarray(elements, dtype=int))
        super().__init__(message or f"non-positive Jacobian in element(s) {self.elements[:10].tolist()}")


class PointNotFoundError(LookupError):
    pass


@dataclass
class DofMap:
    """Quadratic Lagrange numbering: vertices first, then one DOF per edge."""

    elem_dofs: np.ndarray
    n_vertices: int
    n_edges: int
    constrained: np.ndarray = field(default=None)

    @property
    def n_dofs(self) -> int:
        return self.n_vertices + self.n_edges

    def counts(self) -> tuple[int, int]:
        if self.constrained is None:
            return 0, self.n_dofs
        c = int(np.count_nonzero(self.constrained))
        return c, self.n_dofs - c


@dataclass
class TriMesh:
    ref_coords: np.ndarray
    phys_coords: np.ndarray
    elements: np.ndarray
    segments: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ref_coords = np.array(self.ref_coords, dtype=float)
        self.ref_coords.setflags(write=False)
        self.phys_coords = np.array(self.phys_coords, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self._build_topology()

    def _build_topology(self):
        el = self.elements
        pairs = el[:, LOCAL_EDGES].reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        self.edges = edges
        self.elem_edges = inverse.reshape(-1, 3)
        self.edge_counts = counts
        nv = len(self.phys_coords)
        self.boundary_vertex = np.zeros(nv, dtype=bool)
        self.boundary_vertex[edges[counts == 1].ravel()] = True
        self.corner = np.zeros(nv, dtype=bool)
        if self.segments:
            member = np.zeros(nv, dtype=int)
            for seg in self.segments.values():
                member[seg] += 1
            self.corner = member >= 2
        self.dofmap = DofMap(
            elem_dofs=np.hstack([el, nv + self.elem_edges]),
            n_vertices=nv,
            n_edges=len(edges),
        )

    @property
    def n_vertices(self) -> int:
        return len(self.phys_coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def copy(self) -> "TriMesh":
        m = object.__new__(TriMesh)
        m.__dict__.update(self.__dict__)
        m.phys_coords = self.phys_coords.copy()
        return m

    def with_coords(self, coords) -> "TriMesh":
        m = self.copy()
        m.phys_coords = np.array(coords, dtype=float)
        return m

    def dof_coords(self, coords=None) -> np.ndarray:
        x = self.phys_coords if coords is None else coords
        mid = 0.5 * (x[self.edges[:, 0]] + x[self.edges[:, 1]])
        return np.vstack([x, mid])

    def areas(self, coords=None) -> np.ndarray:
        x = self.phys_coords if coords is None else coords
        p = x[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def boundary_dofs(self) -> np.ndarray:
        bedges = np.flatnonzero(self.edge_counts == 1)
        return np.concatenate([np.flatnonzero(self.boundary_vertex), self.n_vertices + bedges])

    def segment_dofs(self, name: str) -> np.ndarray:
        """Vertex and edge DOFs lying on a tagged boundary segment."""
        verts = np.asarray(self.segments[name])
        on = np.zeros(self.n_vertices, dtype=bool)
        on[verts] = True
        bedge = (self.edge_counts == 1) & on[self.edges[:, 0]] & on[self.edges[:, 1]]
        return np.concatenate([verts, self.n_vertices + np.flatnonzero(bedge)])

    def vertex_neighbours(self) -> list[np.ndarray]:
        nb = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges:
            nb[a].append(b)
            nb[b].append(a)
        return [np.array(sorted(n), dtype=int) for n in nb]


def build_structured(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0)) -> TriMesh:
    """Criss-cross triangulation of a rectangle (x0, x1, y0, y1).

    Each of the nx*ny cells is split into two triangles with the diagonal
    direction alternating in a checkerboard pattern.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    segments = {
        "bottom": np.array([vid(i, 0) for i in range(nx + 1)]),
        "right": np.array([vid(nx, j) for j in range(ny + 1)]),
        "top": np.array([vid(i, ny) for i in range(nx, -1, -1)]),
        "left": np.array([vid(0, j) for j in range(ny, -1, -1)]),
    }
    return TriMesh(coords, coords.copy(), np.array(tris), segments)


def element_jacobian(mesh: TriMesh, e: int, coords=None):
    """Jacobian determinant and inverse of the affine map reference -> physical.

    The reference here is the element's own computational (xi) triangle, so an
    untouched mesh has J = 1.
    """
    x = mesh.phys_coords if coords is None else coords
    v = mesh.elements[e]
    P = np.column_stack([x[v[1]] - x[v[0]], x[v[2]] - x[v[0]]])
    R = np.column_stack([mesh.ref_coords[v[1]] - mesh.ref_coords[v[0]], mesh.ref_coords[v[2]] - mesh.ref_coords[v[0]]])
    F = P @ np.linalg.inv(R)
    J = float(np.linalg.det(F))
    if J <= 0:
        raise TangledMeshError([e])
    return J, np.linalg.inv(F)


def element_jacobians(mesh: TriMesh, coords=None) -> np.ndarray:
    x = mesh.phys_coords if coords is None else coords
    return mesh.areas(x) / mesh.areas(mesh.ref_coords)


@dataclass
class MeshReport:
    ok: bool
    min_jacobian: float
    min_angle: float
    max_aspect_ratio: float
    inverted: np.ndarray
    conforming: bool
    area: float


def validate(mesh: TriMesh, coords=None) -> MeshReport:
    x = mesh.phys_coords if coords is None else coords
    J = element_jacobians(mesh, x)
    inverted = np.flatnonzero(J <= 0)
    p = x[mesh.elements]
    lens = np.stack([np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)], axis=1)
    ang = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        c = (u * w).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        ang.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
    area = mesh.areas(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        # longest edge over the height onto it
        aspect = lens.max(1) ** 2 / (2.0 * np.abs(area))
    conforming = bool(np.all(mesh.edge_counts <= 2))
    return MeshReport(
        ok=len(inverted) == 0 and conforming,
        min_jacobian=float(J.min()),
        min_angle=float(np.min(ang)),
        max_aspect_ratio=float(np.max(aspect)),
        inverted=inverted,
        conforming=conforming,
        area=float(area.sum()),
    )


def barycentric(mesh: TriMesh, e, p, coords=None) -> np.ndarray:
    x = mesh.phys_coords if coords is None else coords
    v = x[mesh.elements[e]]
    T = np.stack([v[..., 1, :] - v[..., 0, :], v[..., 2, :] - v[..., 0, :]], axis=-1)
    rhs = np.asarray(p, dtype=float) - v[..., 0, :]
    l12 = np.linalg.solve(T, rhs[..., None])[..., 0]
    return np.concatenate([1.0 - l12.sum(-1, keepdims=True), l12], axis=-1)


class PointLocator:
    """Cell-bucket spatial hash over the physical coordinates of one snapshot."""

    def __init__(self, mesh: TriMesh, coords=None, tol: float = 1e-12):
        self.mesh = mesh
        self.x = np.array(mesh.phys_coords if coords is None else coords)
        self.tol = tol
        p = self.x[mesh.elements]
        lo, hi = p.min(1), p.max(1)
        self.origin = self.x.min(0)
        extent = self.x.max(0) - self.origin
        nb = max(1, int(np.sqrt(mesh.n_elements)))
        self.nb = np.array([nb, nb])
        self.h = np.where(extent > 0, extent / nb, 1.0)
        i0 = self._cell(lo)
        i1 = self._cell(hi)
        buckets: dict[tuple[int, int], list[int]] = {}
        for e in range(mesh.n_elements):
            for i in range(i0[e, 0], i1[e, 0] + 1):
                for j in range(i0[e, 1], i1[e, 1] + 1):
                    buckets.setdefault((i, j), []).append(e)
        self.buckets = {k: np.array(v) for k, v in buckets.items()}

    def _cell(self, p):
        c = np.floor((np.asarray(p) - self.origin) / self.h).astype(int)
        return np.clip(c, 0, self.nb - 1)

    def locate(self, p):
        p = np.asarray(p, dtype=float)
        c = self._cell(p)
        cand = self.buckets.get((int(c[0]), int(c[1])), np.empty(0, dtype=int))
        best, best_lam = -1, None
        best_min = -np.inf
        if len(cand):
            lam = barycentric(self.mesh, cand, np.broadcast_to(p, (len(cand), 2)), self.x)
            mins = lam.min(1)
            k = int(np.argmax(mins))
            best, best_lam, best_min = int(cand[k]), lam[k], mins[k]
        if best_min < -self.tol:
            # the hash can miss points on bucket faces; fall back to a full scan
            lam = barycentric(self.mesh, np.arange(self.mesh.n_elements), np.broadcast_to(p, (self.mesh.n_elements, 2)), self.x)
            mins = lam.min(1)
            k = int(np.argmax(mins))
            best, best_lam, best_min = k, lam[k], mins[k]
        if best_min < -self.tol * max(1.0, float(np.abs(p).max())):
            raise PointNotFoundError(f"point {p.tolist()} lies outside the mesh")
        return best, best_lam


def locate_point(mesh: TriMesh, p, coords=None):
    return PointLocator(mesh, coords).locate(p)
