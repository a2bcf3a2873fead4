"""Monolithic saddle-point assembly for the four discretizations.

The continuous pairs use the symmetric-gradient form 2*nu*(eps(u), eps(v))
with the divergence constraint -(div v, p); the normal-continuity pairs
add interior-facet consistency, symmetrization, and tangential-jump
penalty terms (boundary facets drop out because the normal flux is
constrained strongly and the tangential normal-stress is natural).
Velocity Dirichlet data is applied by lifting followed by symmetric
row/column elimination, which keeps the operator symmetric with identity
rows on constrained dofs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elements import make_quadrature, push_forward, tabulate
from .spaces import MixedSpace, StrongBc, strong_bc


@dataclass
class ProblemConfig:
    case: str
    order: int
    viscosity: float = 1.0
    alpha: float | None = None   # tangential-jump penalty; default 10 k^2

    @property
    def penalty(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 10.0 * self.order ** 2


@dataclass
class BlockSystem:
    matrix: sp.csr_matrix      # velocity block first, then pressure
    rhs: np.ndarray
    mixed: MixedSpace
    bc: StrongBc | None

    @property
    def num_velocity(self) -> int:
        return self.mixed.velocity.ndof

    @property
    def num_pressure(self) -> int:
        return self.mixed.pressure.ndof


class ManufacturedSolution:
    """Closed-form enclosed-flow solution with zero pressure.

    The velocity is divergence-free, has zero normal component on the
    unit-square boundary, and satisfies the natural tangential-stress
    condition there, so it serves all four discretizations.
    """

    def __init__(self, viscosity: float = 1.0):
        self.viscosity = viscosity

    @staticmethod
    def velocity(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([np.sin(np.pi * x) * np.cos(np.pi * y),
                                -np.cos(np.pi * x) * np.sin(np.pi * y)])

    @staticmethod
    def velocity_gradient(pts):
        x, y = pts[:, 0], pts[:, 1]
        g = np.empty((len(pts), 2, 2))
        g[:, 0, 0] = np.pi * np.cos(np.pi * x) * np.cos(np.pi * y)
        g[:, 0, 1] = -np.pi * np.sin(np.pi * x) * np.sin(np.pi * y)
        g[:, 1, 0] = np.pi * np.sin(np.pi * x) * np.sin(np.pi * y)
        g[:, 1, 1] = -np.pi * np.cos(np.pi * x) * np.cos(np.pi * y)
        return g

    @staticmethod
    def pressure(pts):
        return np.zeros(len(pts))

    def forcing(self, pts):
        return 2.0 * np.pi ** 2 * self.viscosity * self.velocity(pts)


def manufactured_data(viscosity: float = 1.0) -> ManufacturedSolution:
    return ManufacturedSolution(viscosity)


class _Accumulator:
    """COO triplet buffer that flushes into partial CSR sums."""

    def __init__(self, shape, flush_at=6_000_000):
        self.shape = shape
        self.flush_at = flush_at
        self.rows, self.cols, self.vals = [], [], []
        self.count = 0
        self.partial = None

    def add(self, rows, cols, vals):
        self.rows.append(np.asarray(rows).ravel())
        self.cols.append(np.asarray(cols).ravel())
        self.vals.append(np.asarray(vals).ravel())
        self.count += self.vals[-1].size
        if self.count >= self.flush_at:
            self._flush()

    def _flush(self):
        if not self.vals:
            return
        mat = sp.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=self.shape).tocsr()
        self.partial = mat if self.partial is None else self.partial + mat
        self.rows, self.cols, self.vals = [], [], []
        self.count = 0

    def tocsr(self) -> sp.csr_matrix:
        self._flush()
        if self.partial is None:
            return sp.csr_matrix(self.shape)
        out = self.partial
        out.sum_duplicates()
        return out


def _scatter(acc, gi, si, gj, sj, local):
    scaled = (si[:, None] * sj[None, :]) * local
    acc.add(np.repeat(gi, len(gj)), np.tile(gj, len(gi)), scaled)


def _assemble_cell_terms(mixed: MixedSpace, config: ProblemConfig, forcing,
                         acc: _Accumulator, rhs: np.ndarray) -> None:
    vel, pres = mixed.velocity, mixed.pressure
    topo = vel.mesh.topology
    offset = mixed.offset
    rule = make_quadrature(topo.cell_shape, 2 * config.order + 2)
    ref_v = tabulate(vel.element, rule.points)
    ref_q = tabulate(pres.element, rule.points)
    two_nu = 2.0 * config.viscosity

    cache = {}
    for c in range(topo.num_cells):
        cmap = vel.cell_map(c)
        key = cmap.jac.tobytes()
        if key not in cache:
            vvals, vgrads = push_forward(vel.element, cmap, ref_v, rule.points)
            qvals, _ = push_forward(pres.element, cmap, ref_q, rule.points)
            _, det, _ = cmap.jacobians(rule.points)
            wdet = rule.weights * det
            eps = 0.5 * (vgrads + vgrads.transpose(0, 1, 3, 2))
            div = vgrads[:, :, 0, 0] + vgrads[:, :, 1, 1]
            a_loc = two_nu * np.einsum("q,qiab,qjab->ij", wdet, eps, eps)
            b_loc = -np.einsum("q,qp,qi->pi", wdet, qvals, div)
            cache[key] = (a_loc, b_loc, vvals, wdet)
        a_loc, b_loc, vvals, wdet = cache[key]

        gv = vel.cell_dofs[c]
        sv = vel.cell_dof_scale[c]
        gq = pres.cell_dofs[c] + offset
        sq = pres.cell_dof_scale[c]
        _scatter(acc, gv, sv, gv, sv, a_loc)
        _scatter(acc, gq, sq, gv, sv, b_loc)
        _scatter(acc, gv, sv, gq, sq, b_loc.T)

        fvals = np.asarray(forcing(cmap.map_points(rule.points)))
        load = np.einsum("q,qv,qiv->i", wdet, fvals, vvals)
        np.add.at(rhs, gv, sv * load)


@dataclass
class FacetTabulation:
    """Both-side velocity traces on one interior edge, points matched."""

    edge: int
    cells: tuple
    h_e: float
    tangent: np.ndarray
    normals: tuple               # outward unit normal per side
    weights: np.ndarray          # arc-length quadrature weights
    phys_points: np.ndarray
    values: tuple                # per side: (nq, ndof, 2)
    gradients: tuple             # per side: (nq, ndof, 2, 2)


def jump_average_tables(space, edge: int, quad_degree: int | None = None,
                        _tab_cache: dict | None = None) -> FacetTabulation:
    """Tabulate both adjacent cells on an interior edge.

    Quadrature points are placed by arc length along the global edge
    direction, so the two sides see identical physical points.
    """
    topo, geom = space.mesh
    if topo.boundary_edge[edge]:
        raise ValueError(f"edge {edge} is a boundary edge")
    degree = quad_degree if quad_degree is not None else 2 * space.element.degree + 2
    rule = make_quadrature("interval", degree)
    s = rule.points[:, 0]
    a, b = geom.vertex_coords[topo.edge_vertices[edge]]
    phys = a + s[:, None] * (b - a)
    h_e = geom.edge_length[edge]
    weights = rule.weights * h_e
    c1, c2 = topo.edge_cells[edge]
    n1 = geom.edge_normal[edge]

    values, gradients = [], []
    for c in (c1, c2):
        cmap = space.cell_map(c)
        ref = cmap.inverse_map(phys)
        if _tab_cache is not None:
            key = ref.round(14).tobytes()
            if key not in _tab_cache:
                _tab_cache[key] = tabulate(space.element, ref)
            tab = _tab_cache[key]
        else:
            tab = tabulate(space.element, ref)
        vals, grads = push_forward(space.element, cmap, tab, ref)
        values.append(vals)
        gradients.append(grads)

    return FacetTabulation(edge, (c1, c2), h_e, geom.edge_tangent[edge],
                           (n1, -n1), weights, phys,
                           tuple(values), tuple(gradients))


def _assemble_facet_terms(mixed: MixedSpace, config: ProblemConfig,
                          acc: _Accumulator) -> None:
    vel = mixed.velocity
    topo = vel.mesh.topology
    two_nu = 2.0 * config.viscosity
    alpha = config.penalty
    tab_cache = {}
    for e in range(topo.num_edges):
        if topo.boundary_edge[e]:
            continue
        fac = jump_average_tables(vel, e, _tab_cache=tab_cache)
        t = fac.tangent
        ndof = vel.element.ndof
        # Tangential jump of a one-sided basis function is
        # (v . t) * sym_outer(t, n_side); precompute the constant tensor.
        tmats = [0.5 * (np.outer(t, n) + np.outer(n, t)) for n in fac.normals]
        vt = [fac.values[s] @ t for s in (0, 1)]                  # (nq, ndof)
        eps = [0.5 * (g + g.transpose(0, 1, 3, 2)) for g in fac.gradients]
        eps_dot_t = [[np.einsum("qiab,ab->qi", eps[s], tmats[r])
                      for r in (0, 1)] for s in (0, 1)]
        tt = [[float(np.sum(tmats[s] * tmats[r])) for r in (0, 1)]
              for s in (0, 1)]

        # Row block = test side b, column block = trial side a.  The 1/2
        # of the average cancels one factor of two of the viscosity.
        local = np.empty((2 * ndof, 2 * ndof))
        w = fac.weights
        nu = config.viscosity
        for b in (0, 1):
            for a in (0, 1):
                t1 = -nu * np.einsum("q,qi,qj->ij", w, vt[b], eps_dot_t[a][b])
                t2 = -nu * np.einsum("q,qi,qj->ij", w, eps_dot_t[b][a], vt[a])
                t3 = (two_nu * alpha / fac.h_e) * tt[a][b] * np.einsum(
                    "q,qi,qj->ij", w, vt[b], vt[a])
                local[b * ndof:(b + 1) * ndof,
                      a * ndof:(a + 1) * ndof] = t1 + t2 + t3

        c1, c2 = fac.cells
        gmap = np.concatenate([vel.cell_dofs[c1], vel.cell_dofs[c2]])
        smap = np.concatenate([vel.cell_dof_scale[c1], vel.cell_dof_scale[c2]])
        _scatter(acc, gmap, smap, gmap, smap, local)


def apply_strong_bc(matrix: sp.csr_matrix, rhs: np.ndarray,
                    bc: StrongBc) -> tuple[sp.csr_matrix, np.ndarray]:
    """Lift inhomogeneous data, then eliminate rows and columns symmetrically."""
    total = matrix.shape[0]
    lift = np.zeros(total)
    lift[bc.indices] = bc.values
    rhs = rhs - matrix @ lift
    rhs[bc.indices] = bc.values
    keep = np.ones(total)
    keep[bc.indices] = 0.0
    d = sp.diags(keep)
    matrix = (d @ matrix @ d + sp.diags(1.0 - keep)).tocsr()
    return matrix, rhs


def assemble_taylor_hood(mixed: MixedSpace, config: ProblemConfig, forcing,
                         boundary_data, apply_bc: bool = True) -> BlockSystem:
    """Conforming continuous-pair system with full velocity Dirichlet data."""
    if mixed.case not in ("th-tri", "th-quad"):
        raise ValueError(f"not a continuous pair: {mixed.case!r}")
    total = mixed.ndof
    acc = _Accumulator((total, total))
    rhs = np.zeros(total)
    _assemble_cell_terms(mixed, config, forcing, acc, rhs)
    matrix = acc.tocsr()
    bc = None
    if apply_bc:
        bc = strong_bc(mixed.velocity, boundary_data, mode="dirichlet")
        matrix, rhs = apply_strong_bc(matrix, rhs, bc)
    return BlockSystem(matrix, rhs, mixed, bc)


def assemble_hdiv(mixed: MixedSpace, config: ProblemConfig, forcing,
                  apply_bc: bool = True) -> BlockSystem:
    """Normal-continuity system with interior-penalty velocity coupling."""
    if mixed.case not in ("bdm", "rt"):
        raise ValueError(f"not a normal-continuity pair: {mixed.case!r}")
    total = mixed.ndof
    acc = _Accumulator((total, total))
    rhs = np.zeros(total)
    _assemble_cell_terms(mixed, config, forcing, acc, rhs)
    _assemble_facet_terms(mixed, config, acc)
    matrix = acc.tocsr()
    bc = None
    if apply_bc:
        bc = strong_bc(mixed.velocity, mode="normal-flux")
        matrix, rhs = apply_strong_bc(matrix, rhs, bc)
    return BlockSystem(matrix, rhs, mixed, bc)


def assemble(mixed: MixedSpace, config: ProblemConfig,
             data: ManufacturedSolution | None = None,
             apply_bc: bool = True) -> BlockSystem:
    """Assemble the case-appropriate system for the manufactured problem."""
    if data is None:
        data = manufactured_data(config.viscosity)
    if mixed.case in ("th-tri", "th-quad"):
        return assemble_taylor_hood(mixed, config, data.forcing,
                                    data.velocity, apply_bc)
    return assemble_hdiv(mixed, config, data.forcing, apply_bc)
