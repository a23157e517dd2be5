"""Structured triangulations of axis-aligned rectangles with tagged boundary.

Every grid cell is split along its lower-left to upper-right diagonal, which
keeps refinements by factors of two nested.  Boundary facets carry the unit
outward normal, the tangent (the normal rotated by +90 degrees, so facets
traverse the boundary counterclockwise) and the owning triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TAGS = ("left", "right", "bottom", "top")

# local edge i of a triangle is opposite local vertex i
_LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


@dataclass(frozen=True)
class BoundaryFacet:
    """One boundary edge, oriented so the tangent runs from edge[0] to edge[1]."""

    edge: tuple[int, int]
    tag: str
    outward_normal: np.ndarray
    tangent: np.ndarray
    owning_triangle: int
    edge_id: int


@dataclass(frozen=True)
class Mesh:
    """Immutable triangulation of a rectangle (0, Lx) x (0, Ly)."""

    vertices: np.ndarray              # (nv, 2)
    triangles: np.ndarray             # (nt, 3), counterclockwise
    boundary_facets: tuple[BoundaryFacet, ...]
    h_max: float                      # max triangle diameter
    h_min: float                      # min edge length
    extent: tuple[float, float]
    edges: np.ndarray = field(repr=False, default=None)        # (ne, 2) sorted pairs
    tri_to_edge: np.ndarray = field(repr=False, default=None)  # (nt, 3), local edge i opposite vertex i

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    def triangle_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        for facet in self.boundary_facets:
            mask[list(facet.edge)] = True
        return mask

    def boundary_edge_mask(self):
        mask = np.zeros(self.n_edges, dtype=bool)
        for facet in self.boundary_facets:
            mask[facet.edge_id] = True
        return mask


def build_rect_mesh(nx, ny, extent=(1.0, 1.0)):
    """Triangulate the rectangle (0, Lx) x (0, Ly) with nx-by-ny cells.

    Produces 2*nx*ny triangles over (nx+1)*(ny+1) vertices and tags every
    boundary facet as left/right/bottom/top.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive, got nx={nx}, ny={ny}")
    lx, ly = float(extent[0]), float(extent[1])
    if lx <= 0.0 or ly <= 0.0:
        raise ValueError(f"extent must have positive width and height, got {extent}")

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    a = vid(ii, jj)
    b = vid(ii + 1, jj)
    c = vid(ii + 1, jj + 1)
    d = vid(ii, jj + 1)
    # diagonal a-c: lower triangle (a, b, c), upper triangle (a, c, d)
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    edges, tri_to_edge, edge_count, edge_owner = _edge_table(triangles)
    facets = _boundary_facets(vertices, triangles, edges, edge_count, edge_owner, lx, ly)

    edge_vec = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    edge_len = np.hypot(edge_vec[:, 0], edge_vec[:, 1])
    tri_edge_len = edge_len[tri_to_edge]
    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_facets=tuple(facets),
        h_max=float(tri_edge_len.max()),
        h_min=float(edge_len.min()),
        extent=(lx, ly),
        edges=edges,
        tri_to_edge=tri_to_edge,
    )
    return mesh


def _edge_table(triangles):
    nt = triangles.shape[0]
    raw = np.empty((3 * nt, 2), dtype=np.int64)
    for loc, (i, j) in enumerate(_LOCAL_EDGES):
        raw[loc::3, 0] = triangles[:, i]
        raw[loc::3, 1] = triangles[:, j]
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(
        raw_sorted, axis=0, return_inverse=True, return_counts=True
    )
    tri_to_edge = inverse.reshape(nt, 3)
    # owning triangle of each edge (first incidence wins; unique for boundary)
    edge_owner = np.full(edges.shape[0], -1, dtype=np.int64)
    flat_tri = np.repeat(np.arange(nt), 3)
    for e, t in zip(inverse, flat_tri):
        if edge_owner[e] < 0:
            edge_owner[e] = t
    return edges, tri_to_edge, counts, edge_owner


def _boundary_facets(vertices, triangles, edges, edge_count, edge_owner, lx, ly):
    tol = 1e-12 * max(lx, ly)
    facets = []
    for edge_id in np.flatnonzero(edge_count == 1):
        tri = int(edge_owner[edge_id])
        pair = set(edges[edge_id])
        tri_verts = triangles[tri]
        # orient the edge as it appears in the owning triangle's CCW cycle
        for loc in range(3):
            p, q = int(tri_verts[loc]), int(tri_verts[(loc + 1) % 3])
            if {p, q} == pair:
                break
        else:  # pragma: no cover - structurally impossible
            raise RuntimeError("boundary edge not found in owning triangle")
        d = vertices[q] - vertices[p]
        length = float(np.hypot(d[0], d[1]))
        tangent = d / length
        normal = np.array([tangent[1], -tangent[0]])
        mid = 0.5 * (vertices[p] + vertices[q])
        if abs(mid[0]) <= tol:
            tag = "left"
        elif abs(mid[0] - lx) <= tol:
            tag = "right"
        elif abs(mid[1]) <= tol:
            tag = "bottom"
        elif abs(mid[1] - ly) <= tol:
            tag = "top"
        else:  # pragma: no cover - structurally impossible on a rectangle
            raise RuntimeError(f"boundary edge midpoint {mid} not on the rectangle")
        normal.setflags(write=False)
        tangent.setflags(write=False)
        facets.append(
            BoundaryFacet(
                edge=(p, q),
                tag=tag,
                outward_normal=normal,
                tangent=tangent,
                owning_triangle=tri,
                edge_id=int(edge_id),
            )
        )
    facets.sort(key=lambda f: f.edge)
    return facets


def mesh_size(mesh):
    """(h_max, h_min): max triangle diameter and min edge length."""
    return mesh.h_max, mesh.h_min


def write_mesh_text(mesh, path):
    """Plain-text dump: vertices "x y", triangles "i j k", facets "i j tag"."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"# boundary_facets {len(mesh.boundary_facets)}\n")
        for facet in mesh.boundary_facets:
            fh.write(f"{facet.edge[0]} {facet.edge[1]} {facet.tag}\n")
