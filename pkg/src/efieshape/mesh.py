"""Triangulated surfaces, nodal hat functions and the RT0 degree-of-freedom map.

Local numbering: the RT function with local index ``i`` on a triangle is
attached to the edge opposite vertex ``i`` and reads

    f_i(x) = (x - P_i) / (2 |K|),     div f_i = 1 / |K|,

i.e. the Piola image of the reference function ``p - p_i``. Functions are
not scaled by the edge length.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .quadrature import triangle_frame


class MeshError(ValueError):
    """Raised for unreadable, degenerate or non-conforming meshes."""


class ShapePerturbation(NamedTuple):
    """Displacement field ``x -> x + s * tau * lambda_node(x)``."""

    node: int
    tau: tuple

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.tau, dtype=float)


class PairClass(str, enum.Enum):
    NEAR = "near"
    POINT = "point"
    EDGE = "edge"
    SAME = "same"


@dataclass(frozen=True)
class Edge:
    vertices: tuple  # sorted vertex pair
    triangles: tuple  # adjacent triangle ids, ascending


# relative area below which a triangle counts as degenerate
_DEGENERACY_TOL = 1e-12


class SurfaceMesh:
    """Immutable triangle mesh with edge connectivity."""

    def __init__(self, vertices, triangles):
        vertices = np.array(vertices, dtype=float, copy=True).reshape(-1, 3)
        triangles = np.array(triangles, dtype=np.int64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise MeshError("non-finite vertex coordinates")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle references a vertex index out of range")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        self.vertices = vertices
        self.triangles = triangles
        self._check_triangles()
        self.edges = self._build_edges()
        self.edge_index = {e.vertices: i for i, e in enumerate(self.edges)}
        self._check_conforming()

    def __repr__(self):
        return f"SurfaceMesh(nv={self.nv}, nt={self.nt}, ne={len(self.edges)})"

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    def coords(self, t=None):
        """Vertex coordinates of triangle ``t`` (3, 3), or of all (nt, 3, 3)."""
        if t is None:
            return self.vertices[self.triangles]
        return self.vertices[self.triangles[t]]

    @property
    def areas(self) -> np.ndarray:
        _, area, _ = triangle_frame(self.coords())
        return area

    @property
    def normals(self) -> np.ndarray:
        n, _, _ = triangle_frame(self.coords())
        return n

    def star(self, m: int) -> np.ndarray:
        """Ids of the triangles having ``m`` as a vertex."""
        return np.flatnonzero(np.any(self.triangles == m, axis=1))

    def _check_triangles(self):
        for t, tri in enumerate(self.triangles):
            if len(set(tri.tolist())) != 3:
                raise MeshError(f"triangle {t} repeats a vertex index: {tri.tolist()}")
        if self.nt == 0:
            return
        xyz = self.coords()
        twice_area = np.linalg.norm(np.cross(xyz[:, 1] - xyz[:, 0], xyz[:, 2] - xyz[:, 0]), axis=1)
        longest = np.max(np.linalg.norm(xyz - np.roll(xyz, 1, axis=1), axis=2), axis=1)
        bad = np.flatnonzero(twice_area <= _DEGENERACY_TOL * longest**2)
        if bad.size:
            raise MeshError(f"degenerate (zero-area) triangle {int(bad[0])}")

    def _build_edges(self):
        adj = {}
        for t, tri in enumerate(self.triangles.tolist()):
            for i in range(3):
                key = tuple(sorted((tri[(i + 1) % 3], tri[(i + 2) % 3])))
                adj.setdefault(key, []).append(t)
        edges = []
        for key in sorted(adj):
            tris = adj[key]
            if len(tris) > 2:
                raise MeshError(f"edge {key} has {len(tris)} adjacent triangles (junction)")
            edges.append(Edge(key, tuple(sorted(tris))))
        return edges

    def _check_conforming(self):
        seen = {}
        for t, tri in enumerate(self.triangles.tolist()):
            key = tuple(sorted(tri))
            if key in seen:
                raise MeshError(f"triangles {seen[key]} and {t} coincide")
            seen[key] = t
        _, inverse = np.unique(np.round(self.vertices, 14), axis=0, return_inverse=True)
        if len(np.unique(inverse)) != self.nv:
            raise MeshError("duplicate vertex coordinates (non-conforming mesh)")


@dataclass(frozen=True)
class DofMap:
    """RT0 degrees of freedom, one per interior edge.

    ``dof[t, i]`` is the global index of the function attached to the edge
    opposite local vertex ``i`` of triangle ``t`` (-1 on boundary edges) and
    ``sign[t, i]`` its orientation: +1 on the lower-numbered triangle (flux
    leaves it), -1 on the higher-numbered one.
    """

    ndof: int
    dof: np.ndarray = field(repr=False)
    sign: np.ndarray = field(repr=False)
    edge_of_dof: np.ndarray = field(repr=False)


def build_dofmap(mesh: SurfaceMesh) -> DofMap:
    dof = -np.ones((mesh.nt, 3), dtype=np.int64)
    sign = np.zeros((mesh.nt, 3))
    edge_of_dof = []
    for e_id, edge in enumerate(mesh.edges):
        if len(edge.triangles) != 2:
            continue
        g = len(edge_of_dof)
        edge_of_dof.append(e_id)
        for s, t in zip((1.0, -1.0), edge.triangles):
            tri = mesh.triangles[t].tolist()
            opposite = next(v for v in tri if v not in edge.vertices)
            i = tri.index(opposite)
            dof[t, i] = g
            sign[t, i] = s
    return DofMap(len(edge_of_dof), dof, sign, np.array(edge_of_dof, dtype=np.int64))


def load_mesh(path) -> SurfaceMesh:
    """Read the plain-text format: ``nv nt``, nv lines ``x y z``, nt lines ``i j k``."""
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line.split())
    try:
        nv, nt = (int(v) for v in lines[0])
        verts = [[float(v) for v in row] for row in lines[1:1 + nv]]
        tris = [[int(v) for v in row] for row in lines[1 + nv:1 + nv + nt]]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    if len(verts) != nv or len(tris) != nt or len(lines) != 1 + nv + nt:
        raise MeshError(f"{path}: header announces {nv} vertices and {nt} triangles")
    if any(len(v) != 3 for v in verts) or any(len(t) != 3 for t in tris):
        raise MeshError(f"{path}: rows must have exactly three entries")
    return SurfaceMesh(verts, tris)


def write_mesh(mesh: SurfaceMesh, path) -> None:
    rows = [f"{mesh.nv} {mesh.nt}"]
    rows += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    rows += [" ".join(str(int(i)) for i in t) for t in mesh.triangles]
    Path(path).write_text("\n".join(rows) + "\n")


def _local(mesh, t, m):
    tri = mesh.triangles[t].tolist()
    return tri.index(m) if m in tri else None


def hat_value(mesh: SurfaceMesh, t: int, m: int, bary) -> float:
    """Nodal hat function of vertex ``m`` at a barycentric point of triangle ``t``."""
    i = _local(mesh, t, m)
    return 0.0 if i is None else float(bary[i])


def hat_surface_gradient(mesh: SurfaceMesh, t: int, m: int) -> np.ndarray:
    i = _local(mesh, t, m)
    if i is None:
        return np.zeros(3)
    _, _, grads = triangle_frame(mesh.coords(t))
    return grads[i]


def rt_eval(mesh: SurfaceMesh, t: int, i: int, point) -> np.ndarray:
    """Local RT function ``i`` of triangle ``t`` at the Cartesian ``point``."""
    tri = mesh.coords(t)
    _, area, _ = triangle_frame(tri)
    return (np.asarray(point, dtype=float) - tri[i]) / (2.0 * area)


def rt_div(mesh: SurfaceMesh, t: int, i: int) -> float:
    _, area, _ = triangle_frame(mesh.coords(t))
    return 1.0 / float(area)


def deform_mesh(mesh: SurfaceMesh, perturbation: ShapePerturbation, s: float) -> SurfaceMesh:
    """Apply ``F_s(x) = x + s tau lambda_m(x)``; only vertex ``m`` moves."""
    if not 0 <= s < 1:
        raise ValueError(f"deformation parameter must satisfy 0 <= s < 1, got {s}")
    if not 0 <= perturbation.node < mesh.nv:
        raise ValueError(f"node {perturbation.node} out of range")
    verts = mesh.vertices.copy()
    verts[perturbation.node] = verts[perturbation.node] + s * perturbation.direction
    return SurfaceMesh(verts, mesh.triangles)


def classify_pair(mesh: SurfaceMesh, p: int, q: int) -> PairClass:
    shared = len(set(mesh.triangles[p].tolist()) & set(mesh.triangles[q].tolist()))
    return (PairClass.NEAR, PairClass.POINT, PairClass.EDGE, PairClass.SAME)[shared]


def plate_mesh(nx: int = 4, ny: int = 4, width: float = 1.0, height: float = 1.0) -> SurfaceMesh:
    """Flat rectangular plate in z = 0 split into ``2 * nx * ny`` triangles."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    verts = [(x, y, 0.0) for y in ys for x in xs]
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            # alternate the diagonal so the mesh has no preferred direction
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return SurfaceMesh(verts, tris)


def octahedron_mesh(radius: float = 0.5) -> SurfaceMesh:
    """Closed 8-triangle surface with outward winding."""
    r = radius
    verts = [(r, 0, 0), (-r, 0, 0), (0, r, 0), (0, -r, 0), (0, 0, r), (0, 0, -r)]
    tris = [(0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
            (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5)]
    return SurfaceMesh(verts, tris)
