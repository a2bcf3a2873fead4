"""Structured 2D meshes of the unit square with topological queries.

Triangular meshes split every grid square along its top-left to
bottom-right diagonal; quadrilateral meshes keep the squares.  Entity
numbering is deterministic: vertices and cells lexicographic by
(row, column), edges horizontal-then-vertical-then-diagonal.  Meshes are
immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

VERTEX, EDGE, CELL = 0, 1, 2

# Local edge slots, expressed as pairs of local vertex numbers of the
# oriented cell.  Triangles follow the "edge i opposite-ish vertex i"
# convention; quadrilaterals are bottom/top/left/right in tensor order.
TRI_EDGE_SLOTS = ((1, 2), (0, 2), (0, 1))
QUAD_EDGE_SLOTS = ((0, 1), (2, 3), (0, 2), (1, 3))


@dataclass(frozen=True, order=True)
class EntityRef:
    """A mesh entity identified by dimension (0/1/2) and index."""

    dim: int
    index: int


@dataclass
class MeshTopology:
    cell_shape: str                # "tri" | "quad"
    cells_per_side: int
    num_vertices: int
    num_edges: int
    num_cells: int
    cell_vertices: np.ndarray      # (ncells, 3|4) sorted per cell
    cell_edges: np.ndarray         # (ncells, 3|4) sorted per cell
    edge_vertices: np.ndarray      # (nedges, 2) lower vertex index first
    edge_cells: list               # per edge: sorted list of 1 or 2 cells
    vertex_edges: list             # per vertex: sorted incident edges
    vertex_cells: list             # per vertex: sorted incident cells
    boundary_vertex: np.ndarray    # bool per vertex
    boundary_edge: np.ndarray      # bool per edge
    boundary_cell: np.ndarray      # bool per cell (always False in 2D)

    def entity_count(self, dim: int) -> int:
        return (self.num_vertices, self.num_edges, self.num_cells)[dim]

    def is_boundary(self, ref: EntityRef) -> bool:
        flags = (self.boundary_vertex, self.boundary_edge, self.boundary_cell)
        return bool(flags[ref.dim][ref.index])


@dataclass
class MeshGeometry:
    vertex_coords: np.ndarray      # (nvertices, 2) in the unit square
    edge_length: np.ndarray        # (nedges,)
    edge_tangent: np.ndarray       # (nedges, 2) unit, lower->higher vertex
    edge_normal: np.ndarray        # (nedges, 2) unit, away from lower-indexed cell
    # Per-cell map data: vertices in reference-map order (positive Jacobian),
    # plus the edge id and direction flag for each local edge slot.
    cell_map_vertices: np.ndarray  # (ncells, 3|4)
    cell_edge_ids: np.ndarray      # (ncells, 3|4)
    cell_edge_aligned: np.ndarray  # (ncells, 3|4) bool, local dir == global dir

    def cell_coords(self, cell: int) -> np.ndarray:
        return self.vertex_coords[self.cell_map_vertices[cell]]


class Mesh(NamedTuple):
    """Bundles topology and geometry; unpacks as (topology, geometry)."""

    topology: MeshTopology
    geometry: MeshGeometry


@dataclass
class RefinementLink:
    """Correspondence between a mesh and its uniform refinement."""

    parent_cells: np.ndarray       # (ncoarse_cells, 4) child cell indices
    parent_vertices: np.ndarray    # (ncoarse_vertices,) fine vertex index
    parent_edges: np.ndarray       # (ncoarse_edges, 2) fine edge pair, in order


def _vertex_grid(n: int):
    idx = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    jj, ii = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    coords = np.column_stack([jj.ravel() / n, ii.ravel() / n])
    return idx, coords


def _edge_tables(n: int, with_diagonals: bool):
    """Edge endpoint table plus id grids for horizontal/vertical/diagonal."""
    vid = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    nh = n * (n + 1)
    hor = np.arange(nh).reshape(n + 1, n)
    ver = nh + np.arange(nh).reshape(n, n + 1)
    pairs = [np.column_stack([vid[:, :-1].ravel(), vid[:, 1:].ravel()]),
             np.column_stack([vid[:-1, :].ravel(), vid[1:, :].ravel()])]
    dia = None
    if with_diagonals:
        dia = 2 * nh + np.arange(n * n).reshape(n, n)
        # Diagonal of square (i, j) runs top-left (i+1, j) to bottom-right
        # (i, j+1); the bottom-right vertex has the lower global index.
        pairs.append(np.column_stack([vid[:-1, 1:].ravel(), vid[1:, :-1].ravel()]))
    return np.vstack(pairs), hor, ver, dia


def _adjacency(*, num_vertices, num_edges, num_cells,
               cell_vertices, cell_edge_ids, edge_vertices):
    edge_cells = [[] for _ in range(num_edges)]
    for c in range(num_cells):
        for e in cell_edge_ids[c]:
            edge_cells[e].append(c)
    edge_cells = [sorted(cs) for cs in edge_cells]
    vertex_edges = [[] for _ in range(num_vertices)]
    for e, (a, b) in enumerate(edge_vertices):
        vertex_edges[a].append(e)
        vertex_edges[b].append(e)
    vertex_cells = [[] for _ in range(num_vertices)]
    for c in range(num_cells):
        for v in cell_vertices[c]:
            vertex_cells[v].append(c)
    return (edge_cells, [sorted(es) for es in vertex_edges],
            [sorted(cs) for cs in vertex_cells])


def _geometry(coords, edge_vertices, edge_cells, cell_map_vertices,
              cell_edge_ids, cell_edge_aligned):
    vec = coords[edge_vertices[:, 1]] - coords[edge_vertices[:, 0]]
    length = np.linalg.norm(vec, axis=1)
    tangent = vec / length[:, None]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    # Flip normals that point into the lower-indexed adjacent cell.
    mid = 0.5 * (coords[edge_vertices[:, 0]] + coords[edge_vertices[:, 1]])
    for e, cs in enumerate(edge_cells):
        centroid = coords[cell_map_vertices[cs[0]]].mean(axis=0)
        if np.dot(normal[e], mid[e] - centroid) < 0:
            normal[e] = -normal[e]
    return MeshGeometry(coords, length, tangent, normal,
                        cell_map_vertices, cell_edge_ids, cell_edge_aligned)


def _finish(cell_shape, n, coords, edge_vertices, cell_map_vertices,
            cell_edge_ids, boundary_vertex, boundary_edge):
    num_vertices = len(coords)
    num_edges = len(edge_vertices)
    num_cells = len(cell_map_vertices)
    edge_cells, vertex_edges, vertex_cells = _adjacency(
        num_vertices=num_vertices, num_edges=num_edges, num_cells=num_cells,
        cell_vertices=cell_map_vertices, cell_edge_ids=cell_edge_ids,
        edge_vertices=edge_vertices)
    slots = TRI_EDGE_SLOTS if cell_shape == "tri" else QUAD_EDGE_SLOTS
    aligned = np.empty_like(cell_edge_ids, dtype=bool)
    for k, (la, lb) in enumerate(slots):
        aligned[:, k] = cell_map_vertices[:, la] < cell_map_vertices[:, lb]
    topo = MeshTopology(
        cell_shape=cell_shape, cells_per_side=n,
        num_vertices=num_vertices, num_edges=num_edges, num_cells=num_cells,
        cell_vertices=np.sort(cell_map_vertices, axis=1),
        cell_edges=np.sort(cell_edge_ids, axis=1),
        edge_vertices=edge_vertices, edge_cells=edge_cells,
        vertex_edges=vertex_edges, vertex_cells=vertex_cells,
        boundary_vertex=boundary_vertex, boundary_edge=boundary_edge,
        boundary_cell=np.zeros(num_cells, dtype=bool))
    geom = _geometry(coords, edge_vertices, edge_cells, cell_map_vertices,
                     cell_edge_ids, aligned)
    return Mesh(topo, geom)


def build_structured_tri(n: int) -> Mesh:
    """n-by-n grid of squares, each split top-left to bottom-right."""
    if n < 1:
        raise ValueError("need at least one cell per side")
    vid, coords = _vertex_grid(n)
    edge_vertices, hor, ver, dia = _edge_tables(n, with_diagonals=True)
    ncells = 2 * n * n
    cell_map_vertices = np.empty((ncells, 3), dtype=int)
    cell_edge_ids = np.empty((ncells, 3), dtype=int)
    for i in range(n):
        for j in range(n):
            a, b = vid[i, j], vid[i, j + 1]        # bottom corners
            c, d = vid[i + 1, j], vid[i + 1, j + 1]  # top corners
            lo, up = 2 * (i * n + j), 2 * (i * n + j) + 1
            # Lower triangle (a, b, c): edges (b,c)=diag, (a,c)=vert, (a,b)=hor.
            cell_map_vertices[lo] = (a, b, c)
            cell_edge_ids[lo] = (dia[i, j], ver[i, j], hor[i, j])
            # Upper triangle (b, d, c), ordered for a positive Jacobian:
            # edges (d,c)=top horizontal, (b,c)=diag, (b,d)=right vertical.
            cell_map_vertices[up] = (b, d, c)
            cell_edge_ids[up] = (hor[i + 1, j], dia[i, j], ver[i, j + 1])
    boundary_vertex = np.zeros(len(coords), dtype=bool)
    boundary_vertex[vid[0, :]] = boundary_vertex[vid[n, :]] = True
    boundary_vertex[vid[:, 0]] = boundary_vertex[vid[:, n]] = True
    boundary_edge = np.zeros(len(edge_vertices), dtype=bool)
    boundary_edge[hor[0, :]] = boundary_edge[hor[n, :]] = True
    boundary_edge[ver[:, 0]] = boundary_edge[ver[:, n]] = True
    return _finish("tri", n, coords, edge_vertices, cell_map_vertices,
                   cell_edge_ids, boundary_vertex, boundary_edge)


def build_structured_quad(n: int) -> Mesh:
    """n-by-n grid of axis-aligned squares."""
    if n < 1:
        raise ValueError("need at least one cell per side")
    vid, coords = _vertex_grid(n)
    edge_vertices, hor, ver, _ = _edge_tables(n, with_diagonals=False)
    ncells = n * n
    cell_map_vertices = np.empty((ncells, 4), dtype=int)
    cell_edge_ids = np.empty((ncells, 4), dtype=int)
    for i in range(n):
        for j in range(n):
            c = i * n + j
            cell_map_vertices[c] = (vid[i, j], vid[i, j + 1],
                                    vid[i + 1, j], vid[i + 1, j + 1])
            cell_edge_ids[c] = (hor[i, j], hor[i + 1, j],
                                ver[i, j], ver[i, j + 1])
    boundary_vertex = np.zeros(len(coords), dtype=bool)
    boundary_vertex[vid[0, :]] = boundary_vertex[vid[n, :]] = True
    boundary_vertex[vid[:, 0]] = boundary_vertex[vid[:, n]] = True
    boundary_edge = np.zeros(len(edge_vertices), dtype=bool)
    boundary_edge[hor[0, :]] = boundary_edge[hor[n, :]] = True
    boundary_edge[ver[:, 0]] = boundary_edge[ver[:, n]] = True
    return _finish("quad", n, coords, edge_vertices, cell_map_vertices,
                   cell_edge_ids, boundary_vertex, boundary_edge)


def refine_uniform(mesh: Mesh) -> tuple[Mesh, RefinementLink]:
    """Refine once; the result equals the n -> 2n construction."""
    topo = mesh.topology
    n, m = topo.cells_per_side, 2 * topo.cells_per_side
    fine = (build_structured_tri if topo.cell_shape == "tri"
            else build_structured_quad)(m)

    # Vertices: (i, j) -> (2i, 2j).
    ii, jj = np.divmod(np.arange(topo.num_vertices), n + 1)
    parent_vertices = 2 * ii * (m + 1) + 2 * jj

    # Edges: each parent edge splits into two fine edges at its midpoint,
    # ordered along the lower-to-higher-vertex direction.
    nh, nhf = n * (n + 1), m * (m + 1)
    parent_edges = np.empty((topo.num_edges, 2), dtype=int)
    for e in range(topo.num_edges):
        if e < nh:                       # horizontal h(i, j)
            i, j = divmod(e, n)
            parent_edges[e] = (2 * i * m + 2 * j, 2 * i * m + 2 * j + 1)
        elif e < 2 * nh:                 # vertical v(i, j)
            i, j = divmod(e - nh, n + 1)
            base = nhf + 2 * i * (m + 1) + 2 * j
            parent_edges[e] = (base, base + m + 1)
        else:                            # diagonal d(i, j)
            i, j = divmod(e - 2 * nh, n)
            # Runs from (i, j+1) up-left to (i+1, j): the first half lies in
            # fine square (2i, 2j+1), the second in (2i+1, 2j).
            parent_edges[e] = (2 * nhf + 2 * i * m + 2 * j + 1,
                               2 * nhf + (2 * i + 1) * m + 2 * j)

    if topo.cell_shape == "quad":
        parent_cells = np.empty((topo.num_cells, 4), dtype=int)
        for c in range(topo.num_cells):
            i, j = divmod(c, n)
            parent_cells[c] = (2 * i * m + 2 * j, 2 * i * m + 2 * j + 1,
                               (2 * i + 1) * m + 2 * j,
                               (2 * i + 1) * m + 2 * j + 1)
    else:
        parent_cells = np.empty((topo.num_cells, 4), dtype=int)
        for c in range(topo.num_cells):
            sq, t = divmod(c, 2)
            i, j = divmod(sq, n)
            fsq = lambda a, b: 2 * (a * m + b)  # noqa: E731
            if t == 0:  # lower triangle: three corner copies + one flipped
                parent_cells[c] = (fsq(2 * i, 2 * j),
                                   fsq(2 * i, 2 * j + 1),
                                   fsq(2 * i + 1, 2 * j),
                                   fsq(2 * i, 2 * j) + 1)
            else:       # upper triangle
                parent_cells[c] = (fsq(2 * i, 2 * j + 1) + 1,
                                   fsq(2 * i + 1, 2 * j + 1) + 1,
                                   fsq(2 * i + 1, 2 * j) + 1,
                                   fsq(2 * i + 1, 2 * j + 1))

    return fine, RefinementLink(parent_cells, parent_vertices, parent_edges)


def star(mesh: Mesh, entity: EntityRef) -> list[EntityRef]:
    """The entity plus all strictly higher-dimensional incident entities."""
    topo = mesh.topology
    if not 0 <= entity.index < topo.entity_count(entity.dim):
        raise IndexError(f"no entity {entity}")
    out = [entity]
    if entity.dim == VERTEX:
        out += [EntityRef(EDGE, e) for e in topo.vertex_edges[entity.index]]
        out += [EntityRef(CELL, c) for c in topo.vertex_cells[entity.index]]
    elif entity.dim == EDGE:
        out += [EntityRef(CELL, c) for c in topo.edge_cells[entity.index]]
    return sorted(out)


def closure(mesh: Mesh, entities: Iterable[EntityRef]) -> list[EntityRef]:
    """The entities plus all lower-dimensional incident entities."""
    topo = mesh.topology
    out = set()
    for ent in entities:
        out.add(ent)
        if ent.dim == CELL:
            out.update(EntityRef(EDGE, e) for e in topo.cell_edges[ent.index])
            out.update(EntityRef(VERTEX, v)
                       for v in topo.cell_vertices[ent.index])
        elif ent.dim == EDGE:
            out.update(EntityRef(VERTEX, v)
                       for v in topo.edge_vertices[ent.index])
    return sorted(out)
