"""Experiment driver: solve configurations, error measurement, CSV output.

Every run solves the manufactured enclosed-flow problem with the
multigrid-preconditioned flexible Krylov solver, then measures the
relative velocity error in the (broken) H1 norm, the absolute pressure
L2 error after removing the mean, the largest pointwise divergence over
all quadrature points, and the tangential-jump seminorm (zero for the
continuous pairs by construction).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .assembly import ProblemConfig, jump_average_tables, manufactured_data
from .elements import MAX_QUAD_DEGREE, make_quadrature
from .mg import MgHierarchy, build_hierarchy, make_preconditioner, \
    pressure_kernel
from .sparsela import fgmres, nullspace_projector
from .spaces import MixedSpace

CSV_COLUMNS = ("case,k,nu,levels,n_dofs,m_dofs,alpha,viscosity,rtol,"
               "iterations,converged,setup_s,solve_s,err_h1_vel_rel,"
               "err_l2_p_abs,max_div,jump_seminorm")
STOPPING_COLUMNS = ("case,k,levels,required_rtol,err_h1_vel_rel,"
                    "err_l2_p_abs,resolved")

HDIV_CASES = ("bdm", "rt")


@dataclass
class RunSpec:
    case: str
    k: int
    nu: int = 2
    levels: int = 1
    rtol: float = 1e-10
    max_it: int = 100
    alpha: float | None = None
    viscosity: float = 1.0
    seed: int = 0
    weighting: str = "invmult"
    cheby: str = "repeat"

    def validate(self) -> None:
        if self.case in ("th-tri", "th-quad"):
            if not 2 <= self.k <= 8:
                raise ValueError("continuous pairs support orders 2..8")
        elif self.case in HDIV_CASES:
            if not 1 <= self.k <= 4:
                raise ValueError("normal-continuity pairs support orders 1..4")
        else:
            raise ValueError(f"unknown case {self.case!r}")
        if not 0 <= self.levels <= 5:
            raise ValueError("supported refinement counts are 0..5")
        if not 1 <= self.nu <= 4:
            raise ValueError("supported relaxation counts are 1..4")
        if self.rtol <= 0 or self.max_it < 1:
            raise ValueError("need a positive tolerance and iteration cap")

    def config(self) -> ProblemConfig:
        return ProblemConfig(self.case, self.k, self.viscosity, self.alpha)


@dataclass
class RunRecord:
    spec: RunSpec
    n_dofs: int
    m_dofs: int
    iterations: int
    converged: bool
    setup_s: float
    solve_s: float
    err_h1_vel_rel: float
    err_l2_p_abs: float
    max_div: float
    jump_seminorm: float

    def csv_row(self) -> str:
        s = self.spec
        alpha = s.config().penalty if s.case in HDIV_CASES else 0.0
        return ",".join([
            s.case, str(s.k), str(s.nu), str(s.levels),
            str(self.n_dofs), str(self.m_dofs),
            f"{alpha:.6g}", f"{s.viscosity:.6g}", f"{s.rtol:.6g}",
            str(self.iterations), str(self.converged).lower(),
            f"{self.setup_s:.3f}", f"{self.solve_s:.3f}",
            f"{self.err_h1_vel_rel:.12e}", f"{self.err_l2_p_abs:.12e}",
            f"{self.max_div:.12e}", f"{self.jump_seminorm:.12e}"])


def error_norms(solution: np.ndarray, mixed: MixedSpace,
                viscosity: float = 1.0,
                quad_degree: int | None = None) -> tuple:
    """(relative H1 velocity error, absolute L2 pressure error after mean
    removal, max pointwise divergence, tangential-jump seminorm)."""
    data = manufactured_data(viscosity)
    vel, pres = mixed.velocity, mixed.pressure
    topo = vel.mesh.topology
    k = mixed.order
    degree = quad_degree if quad_degree is not None \
        else min(2 * k + 4, MAX_QUAD_DEGREE)
    rule = make_quadrature(topo.cell_shape, degree)

    verr2 = vbase2 = 0.0
    max_div = 0.0
    pvals_all, wdets, pw = [], [], []
    vtab_cache: dict = {}
    for c in range(topo.num_cells):
        cmap = vel.cell_map(c)
        key = cmap.jac.tobytes()
        if key not in vtab_cache:
            from .elements import push_forward, tabulate
            rv = tabulate(vel.element, rule.points)
            rq = tabulate(pres.element, rule.points)
            vtab_cache[key] = (
                push_forward(vel.element, cmap, rv, rule.points),
                push_forward(pres.element, cmap, rq, rule.points)[0])
        (vvals, vgrads), qvals = vtab_cache[key]
        _, det, _ = cmap.jacobians(rule.points)
        wdet = rule.weights * det
        phys = cmap.map_points(rule.points)

        lv = vel.cell_dof_scale[c] * solution[vel.cell_dofs[c]]
        uh = np.einsum("qjv,j->qv", vvals, lv)
        gh = np.einsum("qjvd,j->qvd", vgrads, lv)
        ue = data.velocity(phys)
        ge = data.velocity_gradient(phys)
        verr2 += np.sum(wdet * (np.sum((uh - ue) ** 2, axis=1)
                                + np.sum((gh - ge) ** 2, axis=(1, 2))))
        vbase2 += np.sum(wdet * (np.sum(ue ** 2, axis=1)
                                 + np.sum(ge ** 2, axis=(1, 2))))
        max_div = max(max_div, np.max(np.abs(gh[:, 0, 0] + gh[:, 1, 1])))

        lp = pres.cell_dof_scale[c] * solution[mixed.offset + pres.cell_dofs[c]]
        pvals_all.append(qvals @ lp)
        wdets.append(wdet)
    pvals_all = np.concatenate(pvals_all)
    wdets = np.concatenate(wdets)
    mean = np.sum(wdets * pvals_all) / np.sum(wdets)
    perr = np.sqrt(np.sum(wdets * (pvals_all - mean) ** 2))

    jump = 0.0
    if mixed.case in HDIV_CASES:
        acc = 0.0
        cache: dict = {}
        for e in range(topo.num_edges):
            if topo.boundary_edge[e]:
                continue
            fac = jump_average_tables(vel, e, _tab_cache=cache)
            t = fac.tangent
            traces = []
            for side, c in enumerate(fac.cells):
                lv = vel.cell_dof_scale[c] * solution[vel.cell_dofs[c]]
                traces.append(np.einsum("qjv,v->qj", fac.values[side], t) @ lv)
            dvt = traces[0] - traces[1]
            # ||sym_outer(t, n)||_F^2 = 1/2 for orthonormal t, n.
            acc += np.sum(fac.weights * dvt ** 2) * 0.5 / fac.h_e
        jump = np.sqrt(2.0 * viscosity * acc)

    return (np.sqrt(verr2 / vbase2), perr, max_div, jump)


def build_solver(spec: RunSpec) -> MgHierarchy:
    spec.validate()
    return build_hierarchy(spec.case, spec.k, spec.levels, spec.config(),
                           nu=spec.nu, weighting=spec.weighting,
                           cheb_mode=spec.cheby, seed=spec.seed)


def run_case(spec: RunSpec, hierarchy: MgHierarchy | None = None) -> RunRecord:
    """Build (or reuse) the solver, run it, and measure errors."""
    spec.validate()
    t0 = time.perf_counter()
    hier = hierarchy if hierarchy is not None else build_solver(spec)
    setup_s = time.perf_counter() - t0
    system = hier.fine.system
    nsp = nullspace_projector([pressure_kernel(hier.fine.mixed)])
    t0 = time.perf_counter()
    x, report = fgmres(system.matrix, system.rhs,
                       preconditioner=make_preconditioner(
                           hier, spec.nu, spec.cheby),
                       rtol=spec.rtol, max_it=spec.max_it, nullspace=nsp)
    solve_s = time.perf_counter() - t0
    verr, perr, max_div, jump = error_norms(x, hier.fine.mixed, spec.viscosity)
    return RunRecord(spec, system.num_velocity, system.num_pressure,
                     report.iterations, report.converged, setup_s, solve_s,
                     verr, perr, max_div, jump)


def sweep(specs, out) -> list:
    """Run a grid of specs, streaming one CSV row per completed run."""
    records = []
    hier_cache: dict = {}
    out.write(CSV_COLUMNS + "\n")
    out.flush()
    for spec in specs:
        spec.validate()
        key = (spec.case, spec.k, spec.levels, spec.alpha, spec.viscosity,
               spec.weighting, spec.seed)
        setup_s = 0.0
        if key not in hier_cache:
            t0 = time.perf_counter()
            hier_cache[key] = build_solver(spec)
            setup_s = time.perf_counter() - t0
        record = run_case(spec, hier_cache[key])
        record.setup_s = setup_s  # attribute the build to its first use
        records.append(record)
        out.write(record.csv_row() + "\n")
        out.flush()
    return records


@dataclass
class StoppingRow:
    case: str
    k: int
    levels: int
    required_rtol: float
    err_h1_vel_rel: float
    err_l2_p_abs: float
    resolved: bool

    def csv_row(self) -> str:
        return ",".join([self.case, str(self.k), str(self.levels),
                         f"{self.required_rtol:.6g}",
                         f"{self.err_h1_vel_rel:.12e}",
                         f"{self.err_l2_p_abs:.12e}",
                         str(self.resolved).lower()])


def _close(a: float, b: float, rel: float = 0.01) -> bool:
    return abs(a - b) <= rel * abs(b) + 1e-16


def stopping_study(case: str, k: int, max_levels: int, *, nu: int = 1,
                   seed: int = 0, out=None, min_rtol: float = 1e-15,
                   max_it_per_leg: int = 300) -> list:
    """Loosest relative tolerance that already delivers discretization error.

    Starting at 1e-2 and halving, the same system is solved to each
    tolerance (continuing from the previous iterate against a fixed
    baseline); a tolerance is accepted once both measured errors agree
    within 1% with the errors at a quarter of it, confirmed one
    quartering further down.
    """
    if case not in ("th-quad", "bdm"):
        raise ValueError("the stopping study covers th-quad and bdm only")
    rows = []
    if out is not None:
        out.write(STOPPING_COLUMNS + "\n")
        out.flush()
    for levels in range(1, max_levels + 1):
        spec = RunSpec(case, k, nu=nu, levels=levels, seed=seed)
        hier = build_solver(spec)
        system = hier.fine.system
        nsp = nullspace_projector([pressure_kernel(hier.fine.mixed)])
        precond = make_preconditioner(hier, nu, spec.cheby)
        base = float(np.linalg.norm(nsp(system.rhs.copy())))

        rtols, errs = [], []
        x = None
        j = 0
        found = None
        while True:
            rtol = 1e-2 * 0.5 ** j
            if rtol < min_rtol:
                break
            x, _ = fgmres(system.matrix, system.rhs, preconditioner=precond,
                          rtol=rtol, max_it=max_it_per_leg, nullspace=nsp,
                          x0=x, target_norm=base)
            verr, perr, _, _ = error_norms(x, hier.fine.mixed, spec.viscosity)
            rtols.append(rtol)
            errs.append((verr, perr))
            # Candidate i plateaus if its errors match those at rtol/4,
            # confirmed against rtol/16.
            for i in range(len(errs) - 4):
                ok4 = (_close(errs[i][0], errs[i + 2][0])
                       and _close(errs[i][1], errs[i + 2][1]))
                ok16 = (_close(errs[i][0], errs[i + 4][0])
                        and _close(errs[i][1], errs[i + 4][1]))
                if ok4 and ok16:
                    found = i
                    break
            if found is not None:
                break
            j += 1
        if found is not None:
            row = StoppingRow(case, k, levels, rtols[found],
                              errs[found][0], errs[found][1], True)
        else:
            row = StoppingRow(case, k, levels, min_rtol,
                              errs[-1][0], errs[-1][1], False)
        rows.append(row)
        if out is not None:
            out.write(row.csv_row() + "\n")
            out.flush()
    return rows


def expand_grid(table: dict) -> list:
    """RunSpecs from a flat config table; k, nu, levels may be lists."""
    def as_list(key):
        val = table.get(key)
        if val is None:
            return [None]
        return list(val) if isinstance(val, (list, tuple)) else [val]

    base = {name: table[name] for name in
            ("case", "rtol", "max_it", "alpha", "viscosity", "seed",
             "weighting", "cheby") if name in table}
    specs = []
    for k in as_list("k"):
        for nu in as_list("nu"):
            for levels in as_list("levels"):
                kwargs = dict(base)
                if k is not None:
                    kwargs["k"] = k
                if nu is not None:
                    kwargs["nu"] = nu
                if levels is not None:
                    kwargs["levels"] = levels
                specs.append(RunSpec(**kwargs))
    return specs
