"""Monolithic geometric multigrid over nested structured meshes.

Each level rediscretizes the problem on its own mesh; transfers are the
matrix representation of the natural embedding of nested spaces (fine
dual functionals applied to coarse basis functions), with restriction
the transpose of prolongation.  Relaxation is the additive patch sweep
accelerated by a Chebyshev iteration targeting the upper three quarters
of the estimated spectrum, and the coarsest level is solved directly
with the constant-pressure component projected out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import BlockSystem, ProblemConfig, assemble
from .elements import tabulate
from .meshtopo import (Mesh, RefinementLink, build_structured_quad,
                       build_structured_tri, refine_uniform)
from .spaces import FunctionSpace, MixedSpace, build_mixed
from .sparsela import (DenseFactorization, estimate_lambda_max, lu_factor,
                       lu_solve)
from .vanka import PatchSet, apply_additive, build_patches, factor_patches

COARSE_CELLS_PER_SIDE = 5
LAMBDA_LOWER_FRACTION = 0.25
LAMBDA_UPPER_FACTOR = 1.1
CHEB_MODES = ("degree", "repeat")


@dataclass
class TransferPair:
    """Coupled prolongation between two consecutive levels."""

    full: sp.csr_matrix      # natural embedding, no boundary treatment
    masked: sp.csr_matrix    # constrained rows/columns zeroed for cycling

    def prolong(self, coarse_vec: np.ndarray) -> np.ndarray:
        return self.masked @ coarse_vec

    def restrict(self, fine_vec: np.ndarray) -> np.ndarray:
        return self.masked.T @ fine_vec


@dataclass
class ChebyshevParams:
    lam: float
    steps: int
    seed: int

    @property
    def lower(self) -> float:
        return LAMBDA_LOWER_FRACTION * self.lam

    @property
    def upper(self) -> float:
        return LAMBDA_UPPER_FACTOR * self.lam


@dataclass
class Level:
    mesh: Mesh
    mixed: MixedSpace
    system: BlockSystem
    patches: PatchSet | None
    cheb: ChebyshevParams | None


@dataclass
class MgHierarchy:
    levels: list                 # levels[0] is the coarsest
    transfers: list              # transfers[i]: level i-1 -> level i (i >= 1)
    coarse_factor: DenseFactorization
    coarse_kernel: np.ndarray    # unit constant-pressure vector
    config: ProblemConfig
    nu: int = 2
    cheb_mode: str = "repeat"

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def fine(self) -> Level:
        return self.levels[-1]


def _prolongation_entries(coarse: FunctionSpace, fine: FunctionSpace,
                          parent: int, child: int, cache: dict) -> np.ndarray:
    """Dense block of fine dual functionals applied to coarse basis."""
    celem, felem = coarse.element, fine.element
    ccmap, fcmap = coarse.cell_map(parent), fine.cell_map(child)
    rel = ccmap.inverse_map(fcmap.origin[None, :])[0]
    key = (ccmap.jac.tobytes(), fcmap.jac.tobytes(), rel.round(12).tobytes())
    if key in cache:
        return cache[key]

    all_pts = np.vstack(felem.dof_points)
    phys = fcmap.map_points(all_pts)
    cref = ccmap.inverse_map(phys)
    cvals, _ = tabulate(celem, cref)
    if celem.mapping == "piola":
        _, cdet, _ = ccmap.jacobians(cref)
        _, fdet, finv = fcmap.jacobians(all_pts)
        # Coarse push-forward followed by fine pull-back.
        cvals = np.einsum("qab,qjb->qja", ccmap.jac[None] / cdet[:, None, None],
                          cvals)
        cvals = np.einsum("q,qab,qjb->qja", fdet, finv, cvals)

    entries = np.empty((felem.ndof, celem.ndof))
    start = 0
    for i in range(felem.ndof):
        stop = start + len(felem.dof_points[i])
        w = felem.dof_weights[i]
        if felem.value_shape == ():
            entries[i] = np.einsum("q,qj->j", w, cvals[start:stop])
        else:
            entries[i] = np.einsum("qv,qjv->j", w, cvals[start:stop])
        start = stop
    cache[key] = entries
    return entries


def build_prolongation(coarse: FunctionSpace, fine: FunctionSpace,
                       link: RefinementLink) -> sp.csr_matrix:
    """Natural-embedding interpolation matrix between nested spaces."""
    rows, cols, vals = [], [], []
    cache: dict = {}
    for parent in range(coarse.mesh.topology.num_cells):
        gc = coarse.cell_dofs[parent]
        sc = coarse.cell_dof_scale[parent]
        for child in link.parent_cells[parent]:
            entries = _prolongation_entries(coarse, fine, parent, child, cache)
            gf = fine.cell_dofs[child]
            sf = fine.cell_dof_scale[child]
            # Row gf of P is the global fine functional (1/sf times the
            # reference one) applied to the coarse basis (sc times the
            # mapped reference basis).
            block = (sc[None, :] / sf[:, None]) * entries
            rows.append(np.repeat(gf, len(gc)))
            cols.append(np.tile(gc, len(gf)))
            vals.append(block.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # Shared fine dofs are computed once per adjacent child with equal
    # values; keep the first occurrence of each (row, col) pair.
    order = rows.astype(np.int64) * coarse.ndof + cols
    _, first = np.unique(order, return_index=True)
    rows, cols, vals = rows[first], cols[first], vals[first]
    keep = np.abs(vals) > 1e-12
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(fine.ndof, coarse.ndof))


def _mask_transfer(full: sp.csr_matrix, coarse_level: Level,
                   fine_level: Level) -> sp.csr_matrix:
    rkeep = np.ones(full.shape[0])
    ckeep = np.ones(full.shape[1])
    if fine_level.system.bc is not None:
        rkeep[fine_level.system.bc.indices] = 0.0
    if coarse_level.system.bc is not None:
        ckeep[coarse_level.system.bc.indices] = 0.0
    return (sp.diags(rkeep) @ full @ sp.diags(ckeep)).tocsr()


def pressure_kernel(mixed: MixedSpace) -> np.ndarray:
    """Unit vector spanning the constant-pressure nullspace."""
    vec = np.zeros(mixed.ndof)
    vec[mixed.offset:] = 1.0
    return vec / np.linalg.norm(vec)


def build_hierarchy(case: str, k: int, levels: int,
                    config: ProblemConfig | None = None, *, nu: int = 2,
                    weighting: str = "invmult", cheb_mode: str = "repeat",
                    seed: int = 0, est_steps: int = 10) -> MgHierarchy:
    """Rediscretized hierarchy on the 5x5 base mesh refined `levels` times."""
    if levels < 0:
        raise ValueError("need a nonnegative refinement count")
    if cheb_mode not in CHEB_MODES:
        raise ValueError(f"unknown chebyshev mode {cheb_mode!r}")
    if config is None:
        config = ProblemConfig(case, k)
    if config.case != case or config.order != k:
        raise ValueError("problem config does not match the requested case")
    build = build_structured_quad if case == "th-quad" else build_structured_tri
    meshes = [build(COARSE_CELLS_PER_SIDE)]
    links = []
    for _ in range(levels):
        fine, link = refine_uniform(meshes[-1])
        meshes.append(fine)
        links.append(link)

    lvls = []
    for i, mesh in enumerate(meshes):
        mixed = build_mixed(case, mesh, k)
        system = assemble(mixed, config)
        patches = None
        if i > 0:  # the coarsest level is solved directly
            patches = factor_patches(
                build_patches(mixed, system.bc, weighting), system)
        lvls.append(Level(mesh, mixed, system, patches, None))

    transfers = [None]
    for i in range(1, len(lvls)):
        pv = build_prolongation(lvls[i - 1].mixed.velocity,
                                lvls[i].mixed.velocity, links[i - 1])
        pq = build_prolongation(lvls[i - 1].mixed.pressure,
                                lvls[i].mixed.pressure, links[i - 1])
        full = sp.block_diag((pv, pq), format="csr")
        transfers.append(TransferPair(full, _mask_transfer(
            full, lvls[i - 1], lvls[i])))

    # Relaxation spectra, estimated on the patch-preconditioned operator.
    for i, level in enumerate(lvls):
        if level.patches is None:
            continue
        mat = level.system.matrix
        op = lambda v, m=mat, p=level.patches: m @ apply_additive(p, v)
        lam = estimate_lambda_max(op, m=est_steps, seed=seed + 31 * i,
                                  n=mat.shape[0])
        level.cheb = ChebyshevParams(lam, est_steps, seed + 31 * i)

    coarse = lvls[0]
    kernel = pressure_kernel(coarse.mixed)
    dense = coarse.system.matrix.toarray()
    shift = np.max(np.abs(coarse.system.matrix.data))
    factor = lu_factor(dense + shift * np.outer(kernel, kernel))
    return MgHierarchy(lvls, transfers, factor, kernel, config,
                       nu=nu, cheb_mode=cheb_mode)


def chebyshev_iteration(operator, preconditioner, lower: float, upper: float,
                        b: np.ndarray, x: np.ndarray, nu: int) -> np.ndarray:
    """Degree-nu preconditioned Chebyshev iteration on [lower, upper]."""
    op = operator if callable(operator) else (lambda v: operator @ v)
    theta = 0.5 * (upper + lower)
    delta = 0.5 * (upper - lower)
    sigma = theta / delta
    rho = 1.0 / sigma
    r = b - op(x)
    d = preconditioner(r) / theta
    for step in range(nu):
        x = x + d
        if step == nu - 1:
            break
        r = b - op(x)
        rho_next = 1.0 / (2.0 * sigma - rho)
        d = rho_next * rho * d + (2.0 * rho_next / delta) * preconditioner(r)
        rho = rho_next
    return x


def chebyshev_relax(level: Level, b: np.ndarray, x: np.ndarray, nu: int,
                    mode: str = "degree") -> np.ndarray:
    """Patch-preconditioned Chebyshev relaxation on one level."""
    mat = level.system.matrix
    precond = lambda r: apply_additive(level.patches, r)  # noqa: E731
    lower, upper = level.cheb.lower, level.cheb.upper
    if mode == "degree":
        return chebyshev_iteration(mat, precond, lower, upper, b, x, nu)
    if mode != "repeat":
        raise ValueError(f"unknown chebyshev mode {mode!r}")
    damp = 2.0 / (lower + upper)
    for _ in range(nu):
        x = x + damp * precond(b - mat @ x)
    return x


def coarse_solve(hier: MgHierarchy, b: np.ndarray) -> np.ndarray:
    """Direct solve with the constant-pressure component projected out."""
    q = hier.coarse_kernel
    rhs = b - q * (q @ b)
    x = lu_solve(hier.coarse_factor, rhs)
    return x - q * (q @ x)


def v_cycle(hier: MgHierarchy, b: np.ndarray, nu: int | None = None,
            mode: str | None = None) -> np.ndarray:
    """One V(nu, nu) cycle from a zero initial guess."""
    nu = hier.nu if nu is None else nu
    mode = hier.cheb_mode if mode is None else mode

    def cycle(idx: int, rhs: np.ndarray) -> np.ndarray:
        if idx == 0:
            return coarse_solve(hier, rhs)
        level = hier.levels[idx]
        x = np.zeros_like(rhs)
        x = chebyshev_relax(level, rhs, x, nu, mode)
        residual = rhs - level.system.matrix @ x
        coarse_rhs = hier.transfers[idx].restrict(residual)
        x = x + hier.transfers[idx].prolong(cycle(idx - 1, coarse_rhs))
        x = chebyshev_relax(level, rhs, x, nu, mode)
        if level.system.bc is not None:
            # Constrained rows are identity; their exact inverse is a copy.
            x[level.system.bc.indices] = rhs[level.system.bc.indices]
        return x

    return cycle(hier.num_levels - 1, b)


def make_preconditioner(hier: MgHierarchy, nu: int | None = None,
                        mode: str | None = None):
    return lambda r: v_cycle(hier, r, nu, mode)
