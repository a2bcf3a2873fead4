"""Global function spaces over structured meshes.

A FunctionSpace glues a reference element to a mesh: global degrees of
freedom are blocked by entity (vertices, then edges, then cells), and
each cell records the global index and a scale factor (+-1) for every
local degree of freedom.  The scale factors absorb edge-direction
conventions: Lagrange edge dofs are permuted, normal-moment edge dofs of
odd/even Legendre degree flip sign, so shared dofs mean the same
functional from both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import CellMap, ReferenceElement, make_element, \
    make_vector_element, push_forward, tabulate
from .meshtopo import Mesh

CASES = ("th-tri", "th-quad", "bdm", "rt")


@dataclass
class FunctionSpace:
    mesh: Mesh
    element: ReferenceElement
    ndof: int
    entity_dofs: dict            # dim -> (n_entities, dofs_per_entity) array
    cell_dofs: np.ndarray        # (ncells, local ndof) global indices
    cell_dof_scale: np.ndarray   # (ncells, local ndof) +-1 factors
    boundary_dof: np.ndarray     # bool per global dof
    dof_entity: np.ndarray       # (ndof, 2): owning (dim, entity index)

    def cell_map(self, cell: int) -> CellMap:
        return CellMap(self.mesh.topology.cell_shape,
                       self.mesh.geometry.cell_coords(cell))


@dataclass
class MixedSpace:
    velocity: FunctionSpace
    pressure: FunctionSpace
    case: str
    order: int

    @property
    def offset(self) -> int:
        return self.velocity.ndof

    @property
    def ndof(self) -> int:
        return self.velocity.ndof + self.pressure.ndof


@dataclass
class StrongBc:
    indices: np.ndarray   # constrained global velocity dofs, sorted
    values: np.ndarray    # boundary values at those dofs


def build_space(mesh: Mesh, element: ReferenceElement) -> FunctionSpace:
    topo, geom = mesh
    if element.cell_shape != topo.cell_shape:
        raise ValueError(
            f"element on {element.cell_shape!r} cells cannot be built over a "
            f"{topo.cell_shape!r} mesh")
    per_entity = [len(element.entity_dofs[d][0]) if element.entity_dofs[d]
                  else 0 for d in range(3)]
    counts = [topo.num_vertices, topo.num_edges, topo.num_cells]
    offsets = np.concatenate([[0], np.cumsum(
        [per_entity[d] * counts[d] for d in range(3)])])
    ndof = int(offsets[-1])

    entity_dofs = {}
    for d in range(3):
        base = offsets[d] + per_entity[d] * np.arange(counts[d])[:, None]
        entity_dofs[d] = base + np.arange(per_entity[d])[None, :]

    dof_entity = np.empty((ndof, 2), dtype=int)
    for d in range(3):
        for ent in range(counts[d]):
            dof_entity[entity_dofs[d][ent]] = (d, ent)

    nloc = element.ndof
    cell_dofs = np.empty((topo.num_cells, nloc), dtype=int)
    cell_dof_scale = np.ones((topo.num_cells, nloc))
    fwd_perm, fwd_sign = element.edge_transform(True)
    rev_perm, rev_sign = element.edge_transform(False)
    normalized = element.length_normalized
    for c in range(topo.num_cells):
        if normalized:
            pts = geom.cell_coords(c)
            jac = np.column_stack([pts[1] - pts[0], pts[2] - pts[0]])
            area_scale = np.sqrt(np.linalg.det(jac))
        for i, (dim, ent, pos) in enumerate(element.dof_entity):
            if dim == 0:
                v = geom.cell_map_vertices[c, ent]
                cell_dofs[c, i] = entity_dofs[0][v, pos]
            elif dim == 1:
                e = geom.cell_edge_ids[c, ent]
                if geom.cell_edge_aligned[c, ent]:
                    perm, sign = fwd_perm, fwd_sign
                else:
                    perm, sign = rev_perm, rev_sign
                cell_dofs[c, i] = entity_dofs[1][e, perm[pos]]
                cell_dof_scale[c, i] = sign[pos]
                if normalized:
                    cell_dof_scale[c, i] *= (geom.edge_length[e]
                                             / element.edge_ref_lengths[ent])
            else:
                cell_dofs[c, i] = entity_dofs[2][c, pos]
                if normalized:
                    cell_dof_scale[c, i] = area_scale

    boundary_dof = np.zeros(ndof, dtype=bool)
    if per_entity[0]:
        boundary_dof[entity_dofs[0][topo.boundary_vertex].ravel()] = True
    if per_entity[1]:
        boundary_dof[entity_dofs[1][topo.boundary_edge].ravel()] = True

    return FunctionSpace(mesh, element, ndof, entity_dofs, cell_dofs,
                         cell_dof_scale, boundary_dof, dof_entity)


def build_mixed(case: str, mesh: Mesh, k: int) -> MixedSpace:
    """Velocity-pressure pair for one of the four discretizations."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    shape = mesh.topology.cell_shape
    if case == "th-tri":
        if shape != "tri" or k < 2:
            raise ValueError("continuous triangle pair needs a triangular "
                             "mesh and order >= 2")
        vel = make_vector_element(make_element("lagrange-tri", k))
        pres = make_element("lagrange-tri", k - 1)
    elif case == "th-quad":
        if shape != "quad" or k < 2:
            raise ValueError("continuous quadrilateral pair needs a "
                             "quadrilateral mesh and order >= 2")
        vel = make_vector_element(make_element("lagrange-quad", k))
        pres = make_element("lagrange-quad", k - 1)
    else:
        if shape != "tri" or k < 1:
            raise ValueError("normal-continuity pairs need a triangular "
                             "mesh and order >= 1")
        vel = make_element("bdm-tri" if case == "bdm" else "rt-tri", k)
        pres = make_element("dlagrange-tri", k - 1)
    return MixedSpace(build_space(mesh, vel), build_space(mesh, pres),
                      case, k)


def tabulate_cell(space: FunctionSpace, cell: int, ref_points):
    """Physical basis values and gradients on one cell."""
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    tab = tabulate(space.element, pts)
    return push_forward(space.element, space.cell_map(cell), tab, points=pts)


def evaluate_function(space: FunctionSpace, coeffs: np.ndarray, cells,
                      ref_points) -> np.ndarray:
    """Evaluate the finite-element function on given cells at reference points."""
    out = []
    for c in np.atleast_1d(cells):
        vals, _ = tabulate_cell(space, c, ref_points)
        local = space.cell_dof_scale[c] * coeffs[space.cell_dofs[c]]
        out.append(np.einsum("qj...,j->q...", vals, local))
    return out[0] if np.isscalar(cells) or np.ndim(cells) == 0 else out


def interpolate(space: FunctionSpace, fn) -> np.ndarray:
    """Coefficients obtained by applying every dual functional to `fn`.

    `fn` maps an (n, 2) array of coordinates to values of the element's
    value shape.
    """
    elem = space.element
    all_pts = np.vstack(elem.dof_points)
    slices = []
    start = 0
    for p in elem.dof_points:
        slices.append(slice(start, start + len(p)))
        start += len(p)

    coeffs = np.zeros(space.ndof)
    for c in range(space.mesh.topology.num_cells):
        cmap = space.cell_map(c)
        phys = cmap.map_points(all_pts)
        fv = np.asarray(fn(phys), dtype=float)
        if elem.mapping == "piola":
            # Pull physical vectors back so reference functionals apply.
            _, det, inv = cmap.jacobians(all_pts)
            fv = det[:, None] * np.einsum("qab,qb->qa", inv, fv)
        for i in range(elem.ndof):
            val = np.sum(elem.dof_weights[i] * fv[slices[i]])
            # The global functional is (1/scale) times the reference one
            # applied to the pulled-back field.
            coeffs[space.cell_dofs[c, i]] = val / space.cell_dof_scale[c, i]
    return coeffs


def strong_bc(space: FunctionSpace, data=None, mode: str = "dirichlet") -> StrongBc:
    """Constrain velocity dofs on the boundary.

    "dirichlet" pins every dof attached to a boundary entity (both
    components of a continuous velocity); "normal-flux" pins the
    boundary-edge dofs of a normal-continuity space, which are exactly
    its normal moments.
    """
    if mode not in ("dirichlet", "normal-flux"):
        raise ValueError(f"unknown boundary mode {mode!r}")
    if mode == "normal-flux" and space.element.mapping != "piola":
        raise ValueError("normal-flux constraints need a normal-continuity space")
    indices = np.flatnonzero(space.boundary_dof)
    if data is None:
        values = np.zeros(len(indices))
    else:
        values = interpolate(space, data)[indices]
    return StrongBc(indices, values)
