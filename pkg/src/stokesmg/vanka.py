"""Overlapping patch construction and additive subspace correction.

Continuous-pressure pairs get one patch per pressure-carrying mesh
entity: the patch owns that entity's pressure dofs and every velocity
dof on the closure of the entity's star.  Discontinuous-pressure pairs
get one patch per cell, holding the cell's pressure dofs and the
velocity dofs on the closure of the cell and of its edge neighbors.
Every patch solves its dense saddle-point block exactly; corrections are
summed additively with identity weights on pressures (they are owned by
exactly one patch) and, by default, inverse-multiplicity weights on the
shared velocity dofs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meshtopo import EntityRef, closure, star
from .sparsela import (DenseFactorization, SingularMatrixError,
                       extract_submatrix, lu_factor, lu_solve)
from .spaces import MixedSpace, StrongBc

WEIGHTINGS = ("invmult", "unit")


@dataclass
class Patch:
    entity: EntityRef
    indices: np.ndarray           # velocity dofs then pressure dofs
    num_velocity: int
    weights: np.ndarray | None = None
    factor: DenseFactorization | None = None


@dataclass
class PatchSet:
    patches: list
    size: int                     # monolithic system dimension
    multiplicity: np.ndarray      # patches containing each dof
    weighting: str

    @property
    def num_patches(self) -> int:
        return len(self.patches)


def _velocity_dofs_on(space, entities, constrained: set) -> np.ndarray:
    dofs = []
    for ent in entities:
        dofs.extend(space.entity_dofs[ent.dim][ent.index])
    keep = np.array(sorted(d for d in dofs if d not in constrained), dtype=int)
    return keep


def _finish(mixed: MixedSpace, raw_patches, weighting: str) -> PatchSet:
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    size = mixed.ndof
    mult = np.zeros(size)
    patches = []
    for entity, vel, pres in raw_patches:
        if len(vel) + len(pres) == 0:
            continue
        idx = np.concatenate([vel, pres]).astype(int)
        mult[idx] += 1.0
        patches.append(Patch(entity, idx, len(vel)))
    for p in patches:
        w = np.ones(len(p.indices))
        if weighting == "invmult":
            w[:p.num_velocity] = 1.0 / mult[p.indices[:p.num_velocity]]
        p.weights = w
    return PatchSet(patches, size, mult, weighting)


def build_patches_taylor_hood(mixed: MixedSpace, bc: StrongBc | None = None,
                              weighting: str = "invmult") -> PatchSet:
    """One patch per mesh entity that carries pressure dofs."""
    if mixed.case not in ("th-tri", "th-quad"):
        raise ValueError("entity patches are for the continuous pairs")
    vel, pres = mixed.velocity, mixed.pressure
    mesh = vel.mesh
    constrained = set(bc.indices.tolist()) if bc is not None else set()
    offset = mixed.offset
    raw = []
    for dim in range(3):
        if pres.entity_dofs[dim].shape[1] == 0:
            continue
        for ent in range(mesh.topology.entity_count(dim)):
            ref = EntityRef(dim, ent)
            pdofs = pres.entity_dofs[dim][ent] + offset
            vdofs = _velocity_dofs_on(vel, closure(mesh, star(mesh, ref)),
                                      constrained)
            raw.append((ref, vdofs, np.sort(pdofs)))
    return _finish(mixed, raw, weighting)


def build_patches_hdiv_extended(mixed: MixedSpace, bc: StrongBc | None = None,
                                weighting: str = "invmult") -> PatchSet:
    """One patch per cell, extended across its edge neighbors."""
    if mixed.case not in ("bdm", "rt"):
        raise ValueError("extended cell patches are for the "
                         "normal-continuity pairs")
    vel, pres = mixed.velocity, mixed.pressure
    mesh = vel.mesh
    topo = mesh.topology
    constrained = set(bc.indices.tolist()) if bc is not None else set()
    offset = mixed.offset
    raw = []
    for c in range(topo.num_cells):
        cells = {c}
        for e in topo.cell_edges[c]:
            cells.update(topo.edge_cells[e])
        entities = closure(mesh, [EntityRef(2, cc) for cc in sorted(cells)])
        vdofs = _velocity_dofs_on(vel, entities, constrained)
        pdofs = np.sort(pres.entity_dofs[2][c] + offset)
        raw.append((EntityRef(2, c), vdofs, pdofs))
    return _finish(mixed, raw, weighting)


def build_patches(mixed: MixedSpace, bc: StrongBc | None = None,
                  weighting: str = "invmult") -> PatchSet:
    if mixed.case in ("th-tri", "th-quad"):
        return build_patches_taylor_hood(mixed, bc, weighting)
    return build_patches_hdiv_extended(mixed, bc, weighting)


def factor_patches(patchset: PatchSet, system) -> PatchSet:
    """Extract and LU-factor every patch block of the assembled operator."""
    matrix = system.matrix if hasattr(system, "matrix") else system
    for p in patchset.patches:
        block = extract_submatrix(matrix, p.indices, p.indices)
        try:
            p.factor = lu_factor(block)
        except SingularMatrixError as err:
            raise SingularMatrixError(
                f"singular patch block at entity {p.entity}") from err
    return patchset


def apply_additive(patchset: PatchSet, residual: np.ndarray) -> np.ndarray:
    """Weighted sum of exact local solves: sum_i R_i^T W_i A_i^{-1} R_i r."""
    out = np.zeros_like(residual)
    for p in patchset.patches:
        local = lu_solve(p.factor, residual[p.indices])
        out[p.indices] += p.weights * local
    return out
